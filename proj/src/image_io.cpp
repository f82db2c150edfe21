#include "tinyseg/image_io.hpp"

#include <filesystem>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "tinyseg/errors.hpp"

namespace tinyseg {

DecodedImage decode_image(const std::string& path) {
    if (!std::filesystem::exists(path)) throw FileNotFound("image not found: '" + path + "'");
    cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (img.empty()) throw UnsupportedFormat("cannot decode image: '" + path + "'");

    const int depth = img.depth();
    if (depth != CV_8U && depth != CV_16U)
        throw UnsupportedFormat("unsupported bit depth in '" + path + "' (need 8- or 16-bit)");
    int ch = img.channels();
    if (ch == 4) {  // drop alpha
        cv::Mat rgb;
        const int code = depth == CV_8U ? CV_8UC3 : CV_16UC3;
        rgb.create(img.rows, img.cols, code);
        const int from_to[] = {0, 0, 1, 1, 2, 2};
        cv::mixChannels(&img, 1, &rgb, 1, from_to, 3);
        img = rgb;
        ch = 3;
    }
    if (ch != 1 && ch != 3)
        throw UnsupportedFormat("unsupported channel count " + std::to_string(ch) + " in '" +
                                path + "'");

    DecodedImage out;
    out.height = img.rows;
    out.width = img.cols;
    out.channels = ch;
    out.max_value = depth == CV_8U ? 255 : 65535;
    out.pixels.resize(static_cast<std::size_t>(img.rows) * img.cols * ch);
    for (int y = 0; y < img.rows; ++y) {
        std::size_t base = static_cast<std::size_t>(y) * img.cols * ch;
        if (depth == CV_8U) {
            const std::uint8_t* row = img.ptr<std::uint8_t>(y);
            for (int i = 0; i < img.cols * ch; ++i) out.pixels[base + i] = row[i];
        } else {
            const std::uint16_t* row = img.ptr<std::uint16_t>(y);
            for (int i = 0; i < img.cols * ch; ++i) out.pixels[base + i] = row[i];
        }
    }
    // OpenCV decodes color as BGR; reorder to RGB so the channel-mean
    // grayscale conversion reads naturally (mean is order-invariant, but
    // callers inspecting channels should see RGB).
    if (ch == 3) {
        for (std::size_t i = 0; i + 2 < out.pixels.size(); i += 3)
            std::swap(out.pixels[i], out.pixels[i + 2]);
    }
    return out;
}

void write_mask_png(const std::string& path, int height, int width,
                    const std::vector<std::uint8_t>& mask01) {
    if (static_cast<std::size_t>(height) * width != mask01.size())
        throw DimensionMismatch("write_mask_png: mask size does not match dimensions");
    cv::Mat img(height, width, CV_8UC1);
    for (int y = 0; y < height; ++y) {
        std::uint8_t* row = img.ptr<std::uint8_t>(y);
        for (int x = 0; x < width; ++x)
            row[x] = mask01[static_cast<std::size_t>(y) * width + x] ? 255 : 0;
    }
    if (!cv::imwrite(path, img))
        throw DataError("write_mask_png: failed to write '" + path + "'");
}

void write_gray_png(const std::string& path, int height, int width,
                    const std::vector<std::uint8_t>& gray) {
    if (static_cast<std::size_t>(height) * width != gray.size())
        throw DimensionMismatch("write_gray_png: buffer size does not match dimensions");
    cv::Mat img(height, width, CV_8UC1);
    for (int y = 0; y < height; ++y) {
        std::uint8_t* row = img.ptr<std::uint8_t>(y);
        for (int x = 0; x < width; ++x) row[x] = gray[static_cast<std::size_t>(y) * width + x];
    }
    if (!cv::imwrite(path, img))
        throw DataError("write_gray_png: failed to write '" + path + "'");
}

}  // namespace tinyseg
