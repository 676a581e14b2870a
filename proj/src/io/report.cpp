#include "nasdet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"
#include "nasdet/errors.hpp"

namespace nasdet {

using Json = nlohmann::ordered_json;

namespace {

template <class Fn>
void for_each_line(std::string_view text, Fn&& fn) {
    int line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            fn(Json::parse(line));
        } catch (const Json::exception& e) {
            throw ParseError(line_no, e.what());
        }
    }
}

std::string jsonl(const std::vector<Json>& rows) {
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    return out;
}

}  // namespace

std::string search_log_jsonl(const std::vector<EpochRecord>& log) {
    std::vector<Json> rows;
    for (const auto& r : log) {
        rows.push_back({{"stage", r.stage},
                        {"epoch", r.epoch},
                        {"split", r.split},
                        {"loss_out", r.loss_out},
                        {"loss_bra", r.loss_bra},
                        {"loss_total", r.loss_total},
                        {"alive_min", r.alive_min},
                        {"alive_max", r.alive_max}});
    }
    return jsonl(rows);
}

std::string retrain_log_jsonl(const std::vector<TrainRecord>& log) {
    std::vector<Json> rows;
    for (const auto& r : log)
        rows.push_back({{"epoch", r.epoch}, {"loss_out", r.loss_out}, {"loss_bra", r.loss_bra}, {"loss_total", r.loss_total}});
    return jsonl(rows);
}

std::vector<EpochRecord> parse_search_log(std::string_view text) {
    std::vector<EpochRecord> out;
    for_each_line(text, [&](const Json& j) {
        out.push_back({j.at("stage").get<int>(), j.at("epoch").get<int>(), j.at("split").get<std::string>(),
                       j.at("loss_out").get<double>(), j.at("loss_bra").get<double>(), j.at("loss_total").get<double>(),
                       j.at("alive_min").get<int>(), j.at("alive_max").get<int>()});
    });
    return out;
}

std::vector<TrainRecord> parse_retrain_log(std::string_view text) {
    std::vector<TrainRecord> out;
    for_each_line(text, [&](const Json& j) {
        out.push_back({j.at("epoch").get<int>(), j.at("loss_out").get<double>(), j.at("loss_bra").get<double>(),
                       j.at("loss_total").get<double>()});
    });
    return out;
}

std::string metrics_json(const MetricsRecord& m, const Complexity* complexity) {
    Json j{{"iou", m.iou}, {"f1", m.f1}, {"pa", m.pa}, {"params", m.params}, {"flops", m.flops}, {"images", m.images}};
    if (complexity) j["flops_by_kind"] = complexity->flops_by_kind;
    return j.dump(2) + "\n";
}

MetricsRecord parse_metrics(std::string_view text) {
    try {
        const Json j = Json::parse(text);
        return {j.at("iou").get<double>(),          j.at("f1").get<double>(),
                j.at("pa").get<double>(),           j.at("params").get<std::int64_t>(),
                j.at("flops").get<std::int64_t>(), j.at("images").get<std::int64_t>()};
    } catch (const Json::exception& e) {
        throw ParseError(1, e.what());
    }
}

void write_loss_plot(const fs::path& png, const std::vector<EpochRecord>& search,
                     const std::vector<TrainRecord>& retrain, const MetricsRecord* metrics) {
    struct Series {
        std::vector<double> y;
        cv::Scalar color;
        std::string label;
    };
    std::vector<Series> series(3);
    series[0] = {{}, cv::Scalar(200, 90, 30), "search weight"};
    series[1] = {{}, cv::Scalar(40, 140, 40), "search arch"};
    series[2] = {{}, cv::Scalar(30, 30, 200), "retrain"};
    for (const auto& r : search) (r.split == "arch" ? series[1] : series[0]).y.push_back(r.loss_total);
    for (const auto& r : retrain) series[2].y.push_back(r.loss_total);

    const int W = 800, H = 480, left = 70, right = 20, top = 20, bottom = 50;
    cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
    double lo = INFINITY, hi = -INFINITY;
    std::size_t longest = 1;
    for (const auto& s : series) {
        for (double v : s.y)
            if (v > 0 && std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
        longest = std::max(longest, s.y.size());
    }
    if (!(lo < hi)) lo = 0.1, hi = 10;
    const double llo = std::floor(std::log10(lo) * 4) / 4, lhi = std::ceil(std::log10(hi) * 4) / 4;
    const auto to_px = [&](std::size_t i, double v) {
        const double fx = longest > 1 ? double(i) / double(longest - 1) : 0.0;
        const double fy = (std::log10(std::max(v, lo)) - llo) / std::max(lhi - llo, 1e-9);
        return cv::Point(left + int(fx * (W - left - right)), H - bottom - int(fy * (H - top - bottom)));
    };
    cv::rectangle(img, {left, top}, {W - right, H - bottom}, cv::Scalar(0, 0, 0));
    for (double e = std::floor(llo); e <= lhi; e += 1) {
        for (double m : {1.0, 2.0, 5.0}) {
            const double v = m * std::pow(10.0, e);
            if (std::log10(v) < llo - 1e-9 || std::log10(v) > lhi + 1e-9) continue;
            const int y = to_px(0, v).y;
            char label[32];
            std::snprintf(label, sizeof label, "%g", v);
            cv::line(img, {left, y}, {W - right, y}, cv::Scalar(220, 220, 220));
            cv::putText(img, label, {5, y + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0));
        }
    }
    cv::putText(img, "epoch", {W / 2 - 20, H - 15}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0));
    int legend = top + 20;
    for (const auto& s : series) {
        if (s.y.empty()) continue;
        for (std::size_t i = 1; i < s.y.size(); ++i)
            cv::line(img, to_px(i - 1, s.y[i - 1]), to_px(i, s.y[i]), s.color, 2, cv::LINE_AA);
        if (s.y.size() == 1) cv::circle(img, to_px(0, s.y[0]), 3, s.color, cv::FILLED);
        cv::putText(img, s.label, {W - right - 150, legend}, cv::FONT_HERSHEY_SIMPLEX, 0.5, s.color, 1, cv::LINE_AA);
        legend += 20;
    }
    if (metrics) {
        char caption[128];
        std::snprintf(caption, sizeof caption, "test IoU %.4f  F1 %.4f  PA %.4f", metrics->iou, metrics->f1, metrics->pa);
        cv::putText(img, caption, {left + 10, H - bottom - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.5, cv::Scalar(0, 0, 0), 1,
                    cv::LINE_AA);
    }
    std::vector<uchar> bytes;
    if (!cv::imencode(".png", img, bytes)) throw IoError("could not encode " + png.string());
    write_file_atomic(png, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string report_json(const std::vector<EpochRecord>& search, const std::vector<TrainRecord>& retrain,
                        const MetricsRecord* metrics) {
    Json j = Json::object();
    if (!search.empty()) {
        Json stages = Json::array();
        for (const auto& r : search) {
            if (stages.empty() || stages.back()["stage"] != r.stage) {
                stages.push_back({{"stage", r.stage}, {"epochs", 0}, {"alive_max", r.alive_max}});
            }
            stages.back()["epochs"] = std::max(stages.back()["epochs"].get<int>(), r.epoch + 1);
            stages.back()["final_" + r.split + "_loss_total"] = r.loss_total;
        }
        j["search"] = {{"records", search.size()}, {"stages", stages}};
    }
    if (!retrain.empty()) {
        j["retrain"] = {{"epochs", retrain.size()},
                        {"first_loss_total", retrain.front().loss_total},
                        {"final_loss_total", retrain.back().loss_total},
                        {"final_loss_out", retrain.back().loss_out}};
    }
    if (metrics) j["test"] = Json::parse(metrics_json(*metrics));
    return j.dump(2) + "\n";
}

}  // namespace nasdet
