#include "nasdet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "nasdet/errors.hpp"
#include "nasdet/files.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

std::string_view defect_name(DefectKind k) {
    switch (k) {
        case DefectKind::Scratch: return "scratch";
        case DefectKind::Blob: return "blob";
        case DefectKind::Crack: return "crack";
    }
    return "?";
}

DefectKind defect_from_name(std::string_view name) {
    for (DefectKind k : {DefectKind::Scratch, DefectKind::Blob, DefectKind::Crack})
        if (defect_name(k) == name) return k;
    throw ConfigError("unknown defect kind '" + std::string(name) + "' (scratch, blob, crack)");
}

void SynthSpec::validate() const {
    if (height < 8 || width < 8) throw ConfigError("synthetic images must be at least 8x8");
    if (channels != 1 && channels != 3) throw ConfigError("synthetic images have 1 or 3 channels");
    if (n_train < 0 || n_test < 0) throw ConfigError("sample counts must be non-negative");
    if (kinds.empty()) throw ConfigError("at least one defect kind is required");
    if (!(contrast_lo > 0 && contrast_lo <= contrast_hi && contrast_hi <= 1)) {
        throw ConfigError("contrast range must satisfy 0 < lo <= hi <= 1");
    }
    if (!(texture_scale > 0) || texture_strength < 0 || noise < 0) {
        throw ConfigError("texture scale must be positive, strength and noise non-negative");
    }
}

namespace {

cv::Point random_point(Rng& rng, int h, int w, int margin) {
    return {rng.uniform_int(margin, w - 1 - margin), rng.uniform_int(margin, h - 1 - margin)};
}

void draw_scratch(cv::Mat& m, Rng& rng) {
    const int h = m.rows, w = m.cols, span = std::min(h, w);
    const double len = rng.uniform(0.3, 0.8) * span;
    const double theta = rng.uniform(0, std::numbers::pi);
    const cv::Point2d c(rng.uniform(0.3, 0.7) * w, rng.uniform(0.3, 0.7) * h);
    const cv::Point2d d(std::cos(theta) * len / 2, std::sin(theta) * len / 2);
    const cv::Point2d bend(-d.y * rng.uniform(-0.15, 0.15), d.x * rng.uniform(-0.15, 0.15));
    std::vector<cv::Point> pts{c - d, c + bend, c + d};
    for (auto& p : pts) {
        p.x = std::clamp(p.x, 0, w - 1);
        p.y = std::clamp(p.y, 0, h - 1);
    }
    cv::polylines(m, pts, false, cv::Scalar(255), rng.uniform_int(1, 2), cv::LINE_8);
}

void draw_blob(cv::Mat& m, Rng& rng) {
    const int span = std::min(m.rows, m.cols);
    const int a = std::max(2, int(std::lround(rng.uniform(0.04, 0.12) * span)));
    const int b = std::max(2, int(std::lround(rng.uniform(0.5, 1.0) * a)));
    const cv::Point c = random_point(rng, m.rows, m.cols, a + 1);
    cv::ellipse(m, c, cv::Size(a, b), rng.uniform(0, 180), 0, 360, cv::Scalar(255), cv::FILLED, cv::LINE_8);
}

void crack_walk(cv::Mat& m, Rng& rng, cv::Point2d p, double theta, int steps, bool may_branch) {
    std::vector<cv::Point> pts{p};
    for (int i = 0; i < steps; ++i) {
        theta += rng.normal(0, 0.45);
        p += cv::Point2d(std::cos(theta), std::sin(theta)) * rng.uniform(1.5, 3.0);
        p.x = std::clamp(p.x, 0.0, double(m.cols - 1));
        p.y = std::clamp(p.y, 0.0, double(m.rows - 1));
        pts.emplace_back(int(std::lround(p.x)), int(std::lround(p.y)));
        if (may_branch && i == steps / 2 && rng.uniform() < 0.5) {
            crack_walk(m, rng, p, theta + rng.uniform(0.6, 1.2) * (rng.uniform() < 0.5 ? -1 : 1), steps / 2, false);
        }
    }
    cv::polylines(m, pts, false, cv::Scalar(255), 1, cv::LINE_8);
}

void draw_crack(cv::Mat& m, Rng& rng) {
    const int span = std::min(m.rows, m.cols);
    const cv::Point2d start(rng.uniform(0.2, 0.8) * m.cols, rng.uniform(0.2, 0.8) * m.rows);
    crack_walk(m, rng, start, rng.uniform(0, 2 * std::numbers::pi), std::max(6, span / 4 + rng.uniform_int(0, span / 6)),
               true);
}

}  // namespace

Sample render_sample(const SynthSpec& spec, std::string_view split, int index) {
    spec.validate();
    const int h = spec.height, w = spec.width;
    Rng rng(spec.seed, std::string("data.") + std::string(split), std::uint64_t(index));

    // background: level plus a few oriented waves
    const double level = rng.uniform(0.35, 0.65);
    struct Wave {
        double kx, ky, phase;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 3; ++i) {
        const double lambda = spec.texture_scale * rng.uniform(0.7, 1.4);
        const double theta = rng.uniform(0, std::numbers::pi);
        const double k = 2 * std::numbers::pi / lambda;
        waves.push_back({k * std::cos(theta), k * std::sin(theta), rng.uniform(0, 2 * std::numbers::pi)});
    }

    // defects: per-pixel signed offset, later defects overwrite earlier ones
    const double polarity = rng.uniform() < 0.5 ? -1.0 : 1.0;
    cv::Mat offset(h, w, CV_64F, cv::Scalar(0));
    cv::Mat mask(h, w, CV_8U, cv::Scalar(0));
    const int n_defects = rng.uniform() < 0.3 ? 2 : 1;
    for (int d = 0; d < n_defects; ++d) {
        const DefectKind kind = spec.kinds[std::size_t(rng.uniform_int(0, int(spec.kinds.size()) - 1))];
        cv::Mat one(h, w, CV_8U, cv::Scalar(0));
        switch (kind) {
            case DefectKind::Scratch: draw_scratch(one, rng); break;
            case DefectKind::Blob: draw_blob(one, rng); break;
            case DefectKind::Crack: draw_crack(one, rng); break;
        }
        const double contrast = rng.uniform(spec.contrast_lo, spec.contrast_hi);
        offset.setTo(cv::Scalar(polarity * contrast), one);
        mask.setTo(cv::Scalar(255), one);
    }
    if (cv::countNonZero(mask) == 0) {
        mask.at<std::uint8_t>(h / 2, w / 2) = 255;
        offset.at<double>(h / 2, w / 2) = polarity * spec.contrast_lo;
    }

    Sample s{Tensor({1, spec.channels, h, w}), Tensor({1, 1, h, w}), ""};
    char stem[32];
    std::snprintf(stem, sizeof stem, "img_%05d", index);
    s.id = stem;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double t = 0;
            for (const auto& wv : waves) t += std::sin(wv.kx * x + wv.ky * y + wv.phase);
            double v = level + spec.texture_strength * t / 3.0 + offset.at<double>(y, x) + rng.normal(0, spec.noise);
            v = std::clamp(v, 0.0, 1.0);
            for (int c = 0; c < spec.channels; ++c) s.image.at(0, c, y, x) = v;
            s.mask.at(0, 0, y, x) = mask.at<std::uint8_t>(y, x) ? 1.0 : 0.0;
        }
    }
    return s;
}

namespace {

std::string encode_png(const cv::Mat& m) {
    std::vector<std::uint8_t> buf;
    if (!cv::imencode(".png", m, buf)) throw IoError("PNG encoding failed");
    return std::string(buf.begin(), buf.end());
}

}  // namespace

void generate_synthetic_dataset(const SynthSpec& spec, const std::filesystem::path& root) {
    spec.validate();
    for (const auto& [split, count] : {std::pair{"train", spec.n_train}, std::pair{"test", spec.n_test}}) {
        const auto dir = root / split;
        for (int i = 0; i < count; ++i) {
            const Sample s = render_sample(spec, split, i);
            cv::Mat img(spec.height, spec.width, spec.channels == 1 ? CV_8UC1 : CV_8UC3);
            cv::Mat msk(spec.height, spec.width, CV_8UC1);
            for (int y = 0; y < spec.height; ++y) {
                for (int x = 0; x < spec.width; ++x) {
                    for (int c = 0; c < spec.channels; ++c) {
                        img.ptr<std::uint8_t>(y)[x * spec.channels + c] =
                            cv::saturate_cast<std::uint8_t>(std::lround(s.image.at(0, c, y, x) * 255.0));
                    }
                    msk.at<std::uint8_t>(y, x) = s.mask.at(0, 0, y, x) > 0 ? 255 : 0;
                }
            }
            write_file_atomic(dir / "images" / (s.id + ".png"), encode_png(img));
            write_file_atomic(dir / "masks" / (s.id + ".png"), encode_png(msk));
        }
    }
}

}  // namespace nasdet
