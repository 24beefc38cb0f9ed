#pragma once

// Self-supervised distortion tasks: preprocessing plus the three distortion
// families whose applied level becomes a free 4-way class label.

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ssmtl/autodiff.hpp"
#include "ssmtl/image.hpp"
#include "ssmtl/rng.hpp"

namespace ssmtl {

enum class DistortionFamily { Brightness, Contrast, MotionBlur };
enum class LevelConfig { Config1, Config2 };

std::string_view to_string(DistortionFamily f);
std::string_view to_string(LevelConfig c);
DistortionFamily parse_family(std::string_view s);
LevelConfig parse_level_config(std::string_view s);

struct DistortionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline constexpr int kDistortionLevels = 4;
inline constexpr int kDefaultBlurKernel = 5;

// One SSDT definition. For Brightness/Contrast `levels` are enhancement
// factors; for MotionBlur they are directions in degrees and `kernel_size`
// fixes the blur length for every class.
struct DistortionSpec {
    DistortionFamily family = DistortionFamily::Brightness;
    std::array<double, kDistortionLevels> levels{};
    LevelConfig config = LevelConfig::Config1;
    int kernel_size = kDefaultBlurKernel;

    // Standard level table for a family/config pair.
    static DistortionSpec make(DistortionFamily family, LevelConfig config,
                               int blur_kernel = kDefaultBlurKernel);

    // Task name used for heads, logs and metrics ("brightness", ...).
    std::string task_name() const;

    // Throws DistortionError when ordering or spacing rules are violated.
    void validate() const;

    bool operator==(const DistortionSpec&) const = default;
};

struct SsdtSample {
    ImageU8 image;
    int distortion_class = 0;
    double applied_level = 0.0;
};

// Round half away from zero, then clamp to [0,255].
std::uint8_t round_clamp_u8(double v);

ImageU8 center_crop(const ImageU8& img);
// Bilinear, half-pixel-centred sampling with edge clamping.
ImageU8 resize_bilinear(const ImageU8& img, int out_h, int out_w);
// Counter-clockwise rotation by quarters * 90 degrees.
ImageU8 rotate90(const ImageU8& img, int quarters);

// Crop, resize to target x target, rotate by a uniformly drawn multiple of 90.
ImageU8 preprocess(const ImageU8& img, int target_size, Rng& rng);
ImageU8 preprocess(const ImageU8& img, int target_size, int quarters);

double luminance_mean(const ImageU8& img);

ImageU8 apply_brightness(const ImageU8& img, double factor);
ImageU8 apply_contrast(const ImageU8& img, double factor);

// Normalised line kernel [size,size]; directions 0, 45, 90, 180.
ad::Tensor motion_blur_kernel(int size, int direction_degrees);
// Replicate-edge padded correlation, per channel.
ImageU8 apply_motion_blur(const ImageU8& img, const ad::Tensor& kernel);

// Applies level `index` of `spec`.
ImageU8 apply_level(const ImageU8& img, const DistortionSpec& spec, int index);

// Draws a level index uniformly from {0..3} and applies it.
SsdtSample make_ssdt_sample(const ImageU8& img, const DistortionSpec& spec, Rng& rng);

}  // namespace ssmtl
