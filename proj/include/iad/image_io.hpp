#pragma once

// Image decode/encode via OpenCV plus a deterministic bilinear resize.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "common.hpp"
#include "core_data.hpp"

namespace iad {

/// Decodes an image file to [0,1] floats. Returns nullopt if OpenCV cannot decode it.
/// Colour images come back as RGB; alpha is dropped.
inline std::optional<Image> load_image(const std::string& path) {
    cv::Mat raw = cv::imread(path, cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
    if (raw.empty()) return std::nullopt;
    double scale = 1.0 / 255.0;
    if (raw.depth() == CV_16U) scale = 1.0 / 65535.0;
    cv::Mat f;
    raw.convertTo(f, CV_32F, scale);
    const int ch = f.channels() >= 3 ? 3 : 1;
    Image img(f.rows, f.cols, ch);
    for (int y = 0; y < f.rows; ++y) {
        const float* row = f.ptr<float>(y);
        for (int x = 0; x < f.cols; ++x) {
            const float* px = row + static_cast<std::ptrdiff_t>(x) * f.channels();
            if (ch == 1) {
                img.at(y, x) = px[0];
            } else {
                // BGR(A) -> RGB
                img.at(y, x, 0) = px[2];
                img.at(y, x, 1) = px[1];
                img.at(y, x, 2) = px[0];
            }
        }
    }
    return img;
}

inline cv::Mat to_mat_u8(const Image& img) {
    cv::Mat m(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3);
    for (int y = 0; y < img.height; ++y) {
        auto* row = m.ptr<unsigned char>(y);
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                // RGB -> BGR for OpenCV
                const int src_c = img.channels == 1 ? 0 : 2 - c;
                float v = std::clamp(img.at(y, x, src_c), 0.0f, 1.0f);
                row[x * img.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        }
    }
    return m;
}

inline void save_png(const std::string& path, const Image& img) {
    if (!cv::imwrite(path, to_mat_u8(img))) throw ConfigError("cannot write image " + path);
}

inline void save_png(const std::string& path, const cv::Mat& mat) {
    if (!cv::imwrite(path, mat)) throw ConfigError("cannot write image " + path);
}

/// Bilinear resize with half-pixel centres (same convention as OpenCV's INTER_LINEAR).
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
    if (src.height == out_h && src.width == out_w) return src;
    Image dst(out_h, out_w, src.channels);
    const double sy = static_cast<double>(src.height) / out_h;
    const double sx = static_cast<double>(src.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
        int y0 = static_cast<int>(std::floor(fy));
        int y1 = std::min(y0 + 1, src.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
            int x0 = static_cast<int>(std::floor(fx));
            int x1 = std::min(x0 + 1, src.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < src.channels; ++c) {
                double top = (1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
                double bot = (1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
                dst.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bot);
            }
        }
    }
    return dst;
}

/// Converts between 1 and 3 channels (luma average / replication).
inline Image to_channels(const Image& src, int channels) {
    if (src.channels == channels) return src;
    Image dst(src.height, src.width, channels);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            if (channels == 1) {
                float sum = 0;
                for (int c = 0; c < src.channels; ++c) sum += src.at(y, x, c);
                dst.at(y, x) = sum / static_cast<float>(src.channels);
            } else {
                for (int c = 0; c < channels; ++c) dst.at(y, x, c) = src.at(y, x, std::min(c, src.channels - 1));
            }
        }
    return dst;
}

}  // namespace iad
