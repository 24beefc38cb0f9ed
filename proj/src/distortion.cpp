#include "ssmtl/distortion.hpp"

#include <algorithm>
#include <cmath>

namespace ssmtl {

std::string_view to_string(DistortionFamily f) {
    switch (f) {
        case DistortionFamily::Brightness: return "brightness";
        case DistortionFamily::Contrast: return "contrast";
        case DistortionFamily::MotionBlur: return "motion_blur";
    }
    return "?";
}

std::string_view to_string(LevelConfig c) { return c == LevelConfig::Config1 ? "config1" : "config2"; }

DistortionFamily parse_family(std::string_view s) {
    if (s == "brightness" || s == "B") return DistortionFamily::Brightness;
    if (s == "contrast" || s == "C") return DistortionFamily::Contrast;
    if (s == "motion_blur" || s == "MB") return DistortionFamily::MotionBlur;
    throw DistortionError("unknown distortion family '" + std::string(s) + "'");
}

LevelConfig parse_level_config(std::string_view s) {
    if (s == "config1") return LevelConfig::Config1;
    if (s == "config2") return LevelConfig::Config2;
    throw DistortionError("unknown level config '" + std::string(s) + "' (expected config1|config2)");
}

DistortionSpec DistortionSpec::make(DistortionFamily family, LevelConfig config, int blur_kernel) {
    DistortionSpec s;
    s.family = family;
    s.config = config;
    s.kernel_size = blur_kernel;
    if (family == DistortionFamily::MotionBlur) {
        s.levels = {0, 45, 90, 180};
    } else if (config == LevelConfig::Config1) {
        s.levels = {0.8, 0.9, 1.0, 1.1};
    } else {
        s.levels = {0.7, 1.0, 1.3, 1.6};
    }
    s.validate();
    return s;
}

std::string DistortionSpec::task_name() const { return std::string(to_string(family)); }

void DistortionSpec::validate() const {
    for (int i = 1; i < kDistortionLevels; ++i) {
        if (!(levels[i] > levels[i - 1]))
            throw DistortionError(task_name() + ": levels must be strictly increasing");
    }
    if (family == DistortionFamily::MotionBlur) {
        for (double d : levels) {
            if (d != 0 && d != 45 && d != 90 && d != 180)
                throw DistortionError("motion_blur: unsupported direction " + std::to_string(d));
        }
        if (kernel_size < 2) throw DistortionError("motion_blur: kernel size must be >= 2");
        return;
    }
    if (levels[0] < 0.0) throw DistortionError(task_name() + ": factors must be non-negative");
    if (family == DistortionFamily::Brightness && levels[0] <= 0.0)
        throw DistortionError("brightness: factors must be positive");
    constexpr double tol = 1e-9;
    for (int i = 1; i < kDistortionLevels; ++i) {
        const double diff = levels[i] - levels[i - 1];
        if (config == LevelConfig::Config1 && diff > 0.1 + tol)
            throw DistortionError(task_name() + " config1: adjacent levels must differ by <= 0.1");
        if (config == LevelConfig::Config2 && diff < 0.3 - tol)
            throw DistortionError(task_name() + " config2: adjacent levels must differ by >= 0.3");
    }
}

std::uint8_t round_clamp_u8(double v) {
    const double r = std::round(v);
    return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

ImageU8 center_crop(const ImageU8& img) {
    const int side = std::min(img.height, img.width);
    const int y0 = (img.height - side) / 2;
    const int x0 = (img.width - side) / 2;
    ImageU8 out(side, side);
    for (int y = 0; y < side; ++y) {
        const auto* src = &img.pixels[img.index(y0 + y, x0, 0)];
        std::copy(src, src + side * ImageU8::kChannels, &out.pixels[out.index(y, 0, 0)]);
    }
    return out;
}

ImageU8 resize_bilinear(const ImageU8& img, int out_h, int out_w) {
    if (out_h == img.height && out_w == img.width) return img;
    ImageU8 out(out_h, out_w);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < ImageU8::kChannels; ++c) {
                const double top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
                const double bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
                out.at(y, x, c) = round_clamp_u8(top * (1 - wy) + bot * wy);
            }
        }
    }
    return out;
}

ImageU8 rotate90(const ImageU8& img, int quarters) {
    quarters = ((quarters % 4) + 4) % 4;
    if (quarters == 0) return img;
    const int h = img.height, w = img.width;
    ImageU8 out = (quarters == 2) ? ImageU8(h, w) : ImageU8(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int ny, nx;
            switch (quarters) {
                case 1: ny = w - 1 - x; nx = y; break;
                case 2: ny = h - 1 - y; nx = w - 1 - x; break;
                default: ny = x; nx = h - 1 - y; break;
            }
            for (int c = 0; c < ImageU8::kChannels; ++c) out.at(ny, nx, c) = img.at(y, x, c);
        }
    }
    return out;
}

ImageU8 preprocess(const ImageU8& img, int target_size, int quarters) {
    return rotate90(resize_bilinear(center_crop(img), target_size, target_size), quarters);
}

ImageU8 preprocess(const ImageU8& img, int target_size, Rng& rng) {
    const int quarters = static_cast<int>(uniform_index(rng, 4));
    return preprocess(img, target_size, quarters);
}

double luminance_mean(const ImageU8& img) {
    if (img.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); i += 3)
        s += 0.299 * img.pixels[i] + 0.587 * img.pixels[i + 1] + 0.114 * img.pixels[i + 2];
    return s / static_cast<double>(img.pixels.size() / 3);
}

ImageU8 apply_brightness(const ImageU8& img, double factor) {
    if (!(factor > 0.0)) throw DistortionError("brightness factor must be > 0");
    if (factor == 1.0) return img;
    ImageU8 out = img;
    for (auto& p : out.pixels) p = round_clamp_u8(p * factor);
    return out;
}

ImageU8 apply_contrast(const ImageU8& img, double factor) {
    if (!(factor >= 0.0)) throw DistortionError("contrast factor must be >= 0");
    if (factor == 1.0) return img;
    const double mu = luminance_mean(img);
    ImageU8 out = img;
    for (auto& p : out.pixels) p = round_clamp_u8(mu + factor * (p - mu));
    return out;
}

ad::Tensor motion_blur_kernel(int size, int direction_degrees) {
    if (size < 2) throw DistortionError("motion blur kernel size must be >= 2");
    const auto n = static_cast<std::size_t>(size);
    ad::Tensor k({n, n});
    auto d = k.data();
    const std::size_t mid = (n - 1) / 2;
    const double v = 1.0 / size;
    switch (direction_degrees) {
        case 0:
        case 180:
            for (std::size_t j = 0; j < n; ++j) d[mid * n + j] = v;
            break;
        case 90:
            for (std::size_t i = 0; i < n; ++i) d[i * n + mid] = v;
            break;
        case 45:
            for (std::size_t i = 0; i < n; ++i) d[i * n + (n - 1 - i)] = v;
            break;
        default:
            throw DistortionError("unsupported motion blur direction " + std::to_string(direction_degrees) +
                                  " (expected 0, 45, 90 or 180)");
    }
    return k;
}

ImageU8 apply_motion_blur(const ImageU8& img, const ad::Tensor& kernel) {
    if (kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1))
        throw DistortionError("motion blur kernel must be square");
    const int n = static_cast<int>(kernel.dim(0));
    const int anchor = (n - 1) / 2;
    struct Tap {
        int dy, dx;
        double w;
    };
    std::vector<Tap> taps;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (double w = kernel.data()[static_cast<std::size_t>(i * n + j)]; w != 0.0)
                taps.push_back({i - anchor, j - anchor, w});

    ImageU8 out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc[ImageU8::kChannels] = {0, 0, 0};
            for (const auto& t : taps) {
                const int sy = std::clamp(y + t.dy, 0, img.height - 1);
                const int sx = std::clamp(x + t.dx, 0, img.width - 1);
                for (int c = 0; c < ImageU8::kChannels; ++c) acc[c] += t.w * img.at(sy, sx, c);
            }
            for (int c = 0; c < ImageU8::kChannels; ++c) out.at(y, x, c) = round_clamp_u8(acc[c]);
        }
    }
    return out;
}

ImageU8 apply_level(const ImageU8& img, const DistortionSpec& spec, int index) {
    if (index < 0 || index >= kDistortionLevels)
        throw DistortionError("distortion level index out of range: " + std::to_string(index));
    const double level = spec.levels[static_cast<std::size_t>(index)];
    switch (spec.family) {
        case DistortionFamily::Brightness: return apply_brightness(img, level);
        case DistortionFamily::Contrast: return apply_contrast(img, level);
        case DistortionFamily::MotionBlur:
            return apply_motion_blur(img, motion_blur_kernel(spec.kernel_size, static_cast<int>(level)));
    }
    return img;
}

SsdtSample make_ssdt_sample(const ImageU8& img, const DistortionSpec& spec, Rng& rng) {
    const int idx = static_cast<int>(uniform_index(rng, kDistortionLevels));
    return SsdtSample{apply_level(img, spec, idx), idx, spec.levels[static_cast<std::size_t>(idx)]};
}

}  // namespace ssmtl
