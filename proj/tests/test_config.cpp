#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ssmtl/config.hpp"
#include "ssmtl/experiment.hpp"

using namespace ssmtl;
namespace fs = std::filesystem;

TEST(Config, JsonRoundTripMaterializesEveryDefault) {
    auto c = ExperimentConfig::preset("p-b-c");
    c.levels = LevelConfig::Config2;
    c.lambdas = {1.0, 0.5, 0.25};
    c.seed = 99;
    c.synth.confounder_bias = 0.9;
    const auto j = c.to_json();
    EXPECT_EQ(j["tasks"], "brightness,contrast");
    EXPECT_EQ(j["levels"], "config2");
    EXPECT_EQ(j["lr.decay_every"], 10);
    EXPECT_EQ(ExperimentConfig::from_json(j).to_json(), j);
}

TEST(Config, DeskDefaults) {
    const ExperimentConfig c;
    EXPECT_EQ(c.batch_size, 64);
    EXPECT_EQ(c.epochs, 30);
    EXPECT_EQ(c.decay_factor, 0.1);
    EXPECT_EQ(c.decay_every, 10);
    EXPECT_EQ(c.alpha, 0.0);
    EXPECT_EQ(c.levels, LevelConfig::Config1);
    EXPECT_EQ(c.arch, "desk");
    EXPECT_EQ(ExperimentConfig::preset("stl").loss_mode, LossMode::Fixed);
    EXPECT_EQ(ExperimentConfig::preset("p-c").loss_mode, LossMode::Uncertainty);
}

TEST(Config, OverridesParsePerKeyType) {
    ExperimentConfig c;
    c.apply_override("lr=0.01");
    c.apply_override("tasks=contrast,motion_blur");
    c.apply_override("loss.lambdas=1,0.5,0.5");
    c.apply_override("loss.freeze_uncertainty=true");
    c.apply_override("synth.per_class=40");
    EXPECT_EQ(c.lr0, 0.01);
    EXPECT_EQ(c.ssdt_families, (std::vector{DistortionFamily::Contrast, DistortionFamily::MotionBlur}));
    EXPECT_EQ(c.lambdas, (std::vector{1.0, 0.5, 0.5}));
    EXPECT_TRUE(c.freeze_uncertainty);
    EXPECT_EQ(c.synth.per_class, 40);
    c.validate();
}

TEST(Config, Errors) {
    ExperimentConfig c;
    EXPECT_THROW(c.apply_override("no_equals"), ConfigFileError);
    EXPECT_THROW(c.apply_override("bogus.key=1"), ConfigFileError);
    EXPECT_THROW(c.apply_override("epochs=ten"), ConfigFileError);
    EXPECT_THROW(c.apply_override("tasks=noise"), ConfigFileError);

    auto bad = ExperimentConfig::preset("stl");
    bad.ssdt_families = {DistortionFamily::Contrast};
    EXPECT_THROW(bad.validate(), ConfigFileError);
    bad = ExperimentConfig::preset("p-c");
    bad.lambdas = {1.0};
    EXPECT_THROW(bad.validate(), ConfigFileError);
    bad = {};
    bad.data = "http://x";
    EXPECT_THROW(bad.validate(), ConfigFileError);
    bad = {};
    bad.ssdt_families = {DistortionFamily::Contrast, DistortionFamily::Contrast};
    EXPECT_THROW(bad.validate(), ConfigFileError);
}

TEST(Config, FileAcceptsManifestOrFlatObject) {
    const auto dir = fs::temp_directory_path() / "ssmtl_test_config";
    fs::create_directories(dir);
    auto c = ExperimentConfig::preset("p-mb");
    c.seed = 5;
    {
        std::ofstream(dir / "manifest.json") << make_manifest(c, dir).dump(2);
        std::ofstream(dir / "flat.json") << c.to_json().dump();
    }
    EXPECT_EQ(config_from_file(dir / "manifest.json").to_json(), c.to_json());
    EXPECT_EQ(config_from_file(dir / "flat.json").to_json(), c.to_json());
    const auto m = make_manifest(c, dir);
    EXPECT_EQ(m["tool"], "ssmtl");
    EXPECT_TRUE(m.contains("version"));
    EXPECT_TRUE(m.contains("timestamp"));
    EXPECT_TRUE(m["artifacts"].contains("trainlog_csv"));
    { std::ofstream(dir / "broken.json") << "{ not json"; }
    EXPECT_THROW(config_from_file(dir / "broken.json"), ConfigFileError);
}
