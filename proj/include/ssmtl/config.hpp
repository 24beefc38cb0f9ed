#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssmtl/dataset.hpp"
#include "ssmtl/distortion.hpp"
#include "ssmtl/model.hpp"

namespace ssmtl {

enum class LossMode { Fixed, Uncertainty };

std::string_view to_string(LossMode m);
LossMode parse_loss_mode(std::string_view s);

// Full declarative description of one training run. Serialises to a flat
// JSON object whose keys mirror the command-line flags.
struct ExperimentConfig {
    std::string name = "custom";
    // Auxiliary distortion tasks; applied to images in this order.
    std::vector<DistortionFamily> ssdt_families;
    LevelConfig levels = LevelConfig::Config1;
    int blur_kernel = kDefaultBlurKernel;

    LossMode loss_mode = LossMode::Uncertainty;
    std::vector<double> lambdas;  // empty -> 1 per task
    bool freeze_uncertainty = false;
    double alpha = 0.0;

    int epochs = 30;
    int batch_size = 64;
    double lr0 = 0.001;
    double decay_factor = 0.1;
    int decay_every = 10;
    std::uint64_t seed = 0;
    int checkpoint_every = 10;

    std::string arch = "desk";

    // "synth" or "dir:PATH"
    std::string data = "synth";
    std::string labels;
    SyntheticParams synth;
    SplitRatios split;

    // Named configurations: stl, p-mb, p-c, p-b, p-b-c.
    static ExperimentConfig preset(const std::string& name);
    static const std::vector<std::string>& preset_names();

    std::vector<DistortionSpec> ssdt_specs() const;
    std::vector<TaskDef> tasks() const;
    ArchConfig arch_config() const;
    std::vector<double> resolved_lambdas() const;

    nlohmann::json to_json() const;
    // Applies every key of a flat object; unknown keys are errors.
    void apply_json(const nlohmann::json& flat);
    // `key=value` override with the value parsed per key type.
    void apply_override(const std::string& assignment);
    static ExperimentConfig from_json(const nlohmann::json& flat);

    void validate() const;
};

struct ConfigFileError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace ssmtl
