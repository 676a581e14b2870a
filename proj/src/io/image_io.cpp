#include "nasdet/image_io.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "nasdet/errors.hpp"
#include "nasdet/files.hpp"

namespace nasdet {

namespace {

const std::set<std::string> kImageExtensions{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".pgm", ".ppm"};

/// stem -> file, rejecting two files with the same stem.
std::map<std::string, fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("missing folder " + dir.string());
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return char(std::tolower(ch)); });
        if (!kImageExtensions.contains(ext)) continue;
        const std::string stem = entry.path().stem().string();
        if (!out.emplace(stem, entry.path()).second) {
            throw DataError("two files share the stem '" + stem + "' in " + dir.string());
        }
    }
    return out;
}

cv::Mat read_image(const fs::path& path) {
    const std::string bytes = read_file(path);
    const cv::Mat raw(1, int(bytes.size()), CV_8U, const_cast<char*>(bytes.data()));
    cv::Mat img = cv::imdecode(raw, cv::IMREAD_UNCHANGED);
    if (img.empty()) throw DataError("cannot decode image " + path.string());
    // colour conversion needs 8-bit, 16-bit or float input
    if (img.depth() != CV_8U && img.depth() != CV_16U && img.depth() != CV_32F) img.convertTo(img, CV_32F);
    return img;
}

cv::Mat to_unit(const cv::Mat& img) {
    cv::Mat f;
    const double scale = img.depth() == CV_16U ? 1.0 / 65535.0 : img.depth() == CV_8U ? 1.0 / 255.0 : 1.0;
    img.convertTo(f, CV_64F, scale);
    return f;
}

cv::Mat to_channels(const cv::Mat& m, int channels, const fs::path& path) {
    cv::Mat out;
    const int c = m.channels();
    if (c == channels) {
        out = m;
    } else if (channels == 1 && c == 3) {
        cv::cvtColor(m, out, cv::COLOR_BGR2GRAY);
    } else if (channels == 1 && c == 4) {
        cv::cvtColor(m, out, cv::COLOR_BGRA2GRAY);
    } else if (channels == 3 && c == 1) {
        cv::cvtColor(m, out, cv::COLOR_GRAY2BGR);
    } else if (channels == 3 && c == 4) {
        cv::cvtColor(m, out, cv::COLOR_BGRA2BGR);
    } else {
        throw DataError("cannot convert " + std::to_string(c) + "-channel image " + path.string());
    }
    if (channels == 3) cv::cvtColor(out, out, cv::COLOR_BGR2RGB);
    return out;
}

}  // namespace

Dataset load_dataset(const fs::path& root, std::string_view split, const LoadOptions& options) {
    if (options.channels != 1 && options.channels != 3) throw ConfigError("images load with 1 or 3 channels");
    const fs::path dir = root / std::string(split);
    const auto images = list_images(dir / "images");
    const auto masks = list_images(dir / "masks");
    if (images.empty()) throw DataError("no images in " + (dir / "images").string());
    for (const auto& [stem, path] : masks)
        if (!images.contains(stem)) throw DataError("mask " + path.string() + " has no matching image");

    Dataset data;
    for (const auto& [stem, path] : images) {
        const auto m = masks.find(stem);
        if (m == masks.end()) throw DataError("image " + path.string() + " has no matching mask");
        cv::Mat img = to_unit(to_channels(read_image(path), options.channels, path));
        cv::Mat msk = to_unit(to_channels(read_image(m->second), 1, m->second));
        if (img.size() != msk.size()) {
            throw DataError("image " + path.string() + " and its mask differ in size");
        }
        if (options.height > 0 && options.width > 0 &&
            (img.rows != options.height || img.cols != options.width)) {
            cv::resize(img, img, cv::Size(options.width, options.height), 0, 0, cv::INTER_AREA);
            cv::resize(msk, msk, cv::Size(options.width, options.height), 0, 0, cv::INTER_LINEAR);
        }
        Sample s{Tensor({1, options.channels, img.rows, img.cols}), Tensor({1, 1, img.rows, img.cols}), stem};
        for (int y = 0; y < img.rows; ++y) {
            const double* ip = img.ptr<double>(y);
            const double* mp = msk.ptr<double>(y);
            for (int x = 0; x < img.cols; ++x) {
                for (int c = 0; c < options.channels; ++c)
                    s.image.at(0, c, y, x) = std::clamp(ip[x * options.channels + c], 0.0, 1.0);
                s.mask.at(0, 0, y, x) = mp[x] >= 0.5 ? 1.0 : 0.0;
            }
        }
        data.push_back(std::move(s));
    }
    return data;
}

namespace {

void write_png(const fs::path& path, const cv::Mat& m) {
    std::vector<std::uint8_t> buf;
    if (!cv::imencode(".png", m, buf)) throw IoError("PNG encoding failed for " + path.string());
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(buf.data()), buf.size()));
}

}  // namespace

void write_gray_png(const fs::path& path, const Tensor& map) {
    const Shape s = map.shape();
    cv::Mat m(s.h, s.w, CV_8UC1);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            m.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(std::lround(map.at(0, 0, y, x) * 255.0));
    write_png(path, m);
}

void write_mask_png(const fs::path& path, const Tensor& map, double threshold) {
    const Shape s = map.shape();
    cv::Mat m(s.h, s.w, CV_8UC1);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) m.at<std::uint8_t>(y, x) = map.at(0, 0, y, x) >= threshold ? 255 : 0;
    write_png(path, m);
}

}  // namespace nasdet
