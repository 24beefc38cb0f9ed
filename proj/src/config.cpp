#include "ssmtl/config.hpp"

#include <algorithm>
#include <sstream>

namespace ssmtl {

std::string_view to_string(LossMode m) { return m == LossMode::Fixed ? "fixed" : "uncertainty"; }

LossMode parse_loss_mode(std::string_view s) {
    if (s == "fixed") return LossMode::Fixed;
    if (s == "uncertainty") return LossMode::Uncertainty;
    throw ConfigFileError("unknown loss mode '" + std::string(s) + "' (expected fixed|uncertainty)");
}

const std::vector<std::string>& ExperimentConfig::preset_names() {
    static const std::vector<std::string> names = {"stl", "p-mb", "p-c", "p-b", "p-b-c"};
    return names;
}

ExperimentConfig ExperimentConfig::preset(const std::string& name) {
    ExperimentConfig c;
    c.name = name;
    if (name == "stl") {
        c.loss_mode = LossMode::Fixed;
    } else if (name == "p-mb") {
        c.ssdt_families = {DistortionFamily::MotionBlur};
    } else if (name == "p-c") {
        c.ssdt_families = {DistortionFamily::Contrast};
    } else if (name == "p-b") {
        c.ssdt_families = {DistortionFamily::Brightness};
    } else if (name == "p-b-c") {
        c.ssdt_families = {DistortionFamily::Brightness, DistortionFamily::Contrast};
    } else {
        throw ConfigFileError("unknown experiment '" + name + "' (expected stl, p-mb, p-c, p-b, p-b-c)");
    }
    return c;
}

std::vector<DistortionSpec> ExperimentConfig::ssdt_specs() const {
    std::vector<DistortionSpec> out;
    for (auto f : ssdt_families) out.push_back(DistortionSpec::make(f, levels, blur_kernel));
    return out;
}

std::vector<TaskDef> ExperimentConfig::tasks() const {
    std::vector<TaskDef> out = {{kPathologyTask, kPathologyClasses}};
    for (const auto& s : ssdt_specs()) out.push_back({s.task_name(), kDistortionLevels});
    return out;
}

ArchConfig ExperimentConfig::arch_config() const { return ArchConfig::by_name(arch); }

std::vector<double> ExperimentConfig::resolved_lambdas() const {
    if (lambdas.empty()) return std::vector<double>(1 + ssdt_families.size(), 1.0);
    return lambdas;
}

namespace {

std::string join_families(const std::vector<DistortionFamily>& fs) {
    std::string out;
    for (auto f : fs) out += (out.empty() ? "" : ",") + std::string(to_string(f));
    return out;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
    return {
        {"name", name},
        {"tasks", join_families(ssdt_families)},
        {"levels", std::string(to_string(levels))},
        {"blur.kernel", blur_kernel},
        {"loss", std::string(to_string(loss_mode))},
        {"loss.lambdas", lambdas},
        {"loss.freeze_uncertainty", freeze_uncertainty},
        {"alpha", alpha},
        {"epochs", epochs},
        {"batch", batch_size},
        {"lr", lr0},
        {"lr.decay_factor", decay_factor},
        {"lr.decay_every", decay_every},
        {"seed", seed},
        {"checkpoint.every", checkpoint_every},
        {"arch", arch},
        {"data", data},
        {"labels", labels},
        {"synth.per_class", synth.per_class},
        {"synth.size", synth.image_size},
        {"synth.confounder_bias", synth.confounder_bias},
        {"synth.lesion_strength", synth.lesion_strength},
        {"split.train", split.train},
        {"split.val", split.val},
        {"split.test", split.test},
    };
}

void ExperimentConfig::apply_json(const nlohmann::json& flat) {
    if (!flat.is_object()) throw ConfigFileError("config must be a flat JSON object");
    for (const auto& [key, v] : flat.items()) {
        try {
            if (key == "name") name = v.get<std::string>();
            else if (key == "tasks") {
                ssdt_families.clear();
                const auto list = v.is_array() ? v.get<std::vector<std::string>>() : split_list(v.get<std::string>());
                for (const auto& s : list) ssdt_families.push_back(parse_family(s));
            } else if (key == "levels") levels = parse_level_config(v.get<std::string>());
            else if (key == "blur.kernel") blur_kernel = v.get<int>();
            else if (key == "loss") loss_mode = parse_loss_mode(v.get<std::string>());
            else if (key == "loss.lambdas") {
                if (v.is_string()) {
                    lambdas.clear();
                    for (const auto& s : split_list(v.get<std::string>())) lambdas.push_back(std::stod(s));
                } else {
                    lambdas = v.get<std::vector<double>>();
                }
            } else if (key == "loss.freeze_uncertainty") freeze_uncertainty = v.get<bool>();
            else if (key == "alpha") alpha = v.get<double>();
            else if (key == "epochs") epochs = v.get<int>();
            else if (key == "batch") batch_size = v.get<int>();
            else if (key == "lr") lr0 = v.get<double>();
            else if (key == "lr.decay_factor") decay_factor = v.get<double>();
            else if (key == "lr.decay_every") decay_every = v.get<int>();
            else if (key == "seed") seed = v.get<std::uint64_t>();
            else if (key == "checkpoint.every") checkpoint_every = v.get<int>();
            else if (key == "arch") arch = v.get<std::string>();
            else if (key == "data") data = v.get<std::string>();
            else if (key == "labels") labels = v.get<std::string>();
            else if (key == "synth.per_class") synth.per_class = v.get<int>();
            else if (key == "synth.size") synth.image_size = v.get<int>();
            else if (key == "synth.confounder_bias") synth.confounder_bias = v.get<double>();
            else if (key == "synth.lesion_strength") synth.lesion_strength = v.get<double>();
            else if (key == "split.train") split.train = v.get<double>();
            else if (key == "split.val") split.val = v.get<double>();
            else if (key == "split.test") split.test = v.get<double>();
            else throw ConfigFileError("unknown config key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw ConfigFileError("bad value for config key '" + key + "': " + e.what());
        } catch (const DistortionError& e) {
            throw ConfigFileError("bad value for config key '" + key + "': " + e.what());
        }
    }
}

void ExperimentConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigFileError("override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    // Keys holding strings take the raw text; everything else is JSON.
    static const std::vector<std::string> string_keys = {"name", "tasks", "levels", "loss", "loss.lambdas",
                                                         "arch", "data", "labels"};
    nlohmann::json value;
    if (std::find(string_keys.begin(), string_keys.end(), key) != string_keys.end()) {
        value = raw;
    } else {
        try {
            value = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::exception&) {
            throw ConfigFileError("cannot parse value for '" + key + "': " + raw);
        }
    }
    apply_json(nlohmann::json{{key, value}});
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& flat) {
    ExperimentConfig c;
    c.apply_json(flat);
    return c;
}

void ExperimentConfig::validate() const {
    if (epochs < 1) throw ConfigFileError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigFileError("batch must be >= 1");
    if (!(lr0 > 0.0)) throw ConfigFileError("lr must be > 0");
    if (!(decay_factor > 0.0)) throw ConfigFileError("lr.decay_factor must be > 0");
    if (decay_every < 1) throw ConfigFileError("lr.decay_every must be >= 1");
    if (checkpoint_every < 1) throw ConfigFileError("checkpoint.every must be >= 1");
    if (!(alpha >= 0.0)) throw ConfigFileError("alpha must be >= 0");
    if (!lambdas.empty() && lambdas.size() != 1 + ssdt_families.size())
        throw ConfigFileError("loss.lambdas needs one weight per task (" + std::to_string(1 + ssdt_families.size()) +
                              ")");
    for (std::size_t i = 0; i < ssdt_families.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (ssdt_families[i] == ssdt_families[j]) throw ConfigFileError("duplicate distortion task");
    if (name == "stl" && !ssdt_families.empty()) throw ConfigFileError("STL must not have distortion tasks");
    if (data != "synth" && data.rfind("dir:", 0) != 0)
        throw ConfigFileError("data must be 'synth' or 'dir:PATH', got '" + data + "'");
    (void)ssdt_specs();
    arch_config().validate();
}

}  // namespace ssmtl
