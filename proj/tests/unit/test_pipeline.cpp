#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ideodepth/errors.hpp"
#include "ideodepth/pipeline.hpp"

using namespace ideodepth;
using namespace ideodepth::pipeline;
using nlohmann::json;

namespace {

const fs::path kFixture = IDEODEPTH_FIXTURE;

PipelineConfig fast_fixture(const std::string& out) {
    auto cfg = PipelineConfig::load(kFixture / "config.json");
    cfg.output_dir = fs::temp_directory_path() / out;
    fs::remove_all(cfg.output_dir);
    cfg.irt.iterations = 300;
    cfg.irt.burn_in = 150;
    cfg.irt.chains = 2;
    return cfg;
}

json read_json(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

std::size_t count_files(const fs::path& dir) {
    std::size_t n = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) ++n;
    return n;
}

}  // namespace

TEST(PipelineConfig, UnknownKeysRejected) {
    EXPECT_THROW(PipelineConfig::from_json(json{{"sed", 1}}), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(json{{"irt", {{"chain", 4}}}}), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(json{{"paths", {{"statement", "x"}}}}), ConfigError);
    EXPECT_THROW(PipelineConfig::from_json(json{{"irt", {{"strategy", "one-point"}}}}), ConfigError);
}

TEST(PipelineConfig, RelativePathsResolveAgainstBase) {
    auto cfg = PipelineConfig::from_json(json{{"paths", {{"statements", "s.jsonl"}}}}, "/data/run");
    EXPECT_EQ(*cfg.paths.statements, fs::path("/data/run/s.jsonl"));
}

TEST(PipelineConfig, DigestFormIgnoresOutputDir) {
    auto a = PipelineConfig::load(kFixture / "config.json");
    auto b = a;
    b.output_dir = "/somewhere/else";
    EXPECT_EQ(a.to_json(), b.to_json());
    EXPECT_FALSE(a.to_json().contains("output_dir"));
    b.seed += 1;
    EXPECT_NE(a.to_json(), b.to_json());
}

TEST(Commands, NamesRoundTrip) {
    for (auto c : all_commands()) EXPECT_EQ(parse_command(to_string(c)), c);
    EXPECT_THROW(parse_command("plot"), ConfigError);
}

TEST(Commands, MissingInputsAreConfigErrors) {
    PipelineConfig cfg;
    cfg.output_dir = fs::temp_directory_path() / "ideodepth_pipeline_missing";
    EXPECT_FALSE(has_inputs(Command::Irt, cfg));
    EXPECT_THROW(run(Command::Irt, cfg), ConfigError);
    cfg.paths.responses = "/nonexistent/responses.csv";
    EXPECT_THROW(run(Command::Agreement, cfg), ConfigError);
}

TEST(Pipeline, OfflineRunIsDeterministicAndManifested) {
    auto a = fast_fixture("ideodepth_pipeline_a");
    auto b = fast_fixture("ideodepth_pipeline_b");
    auto ra = run_all(a);
    auto rb = run_all(b);

    ASSERT_EQ(ra.files.size(), rb.files.size());
    for (std::size_t i = 0; i < ra.files.size(); ++i) {
        EXPECT_EQ(ra.files[i].path, rb.files[i].path);
        EXPECT_EQ(ra.files[i].sha256, rb.files[i].sha256) << ra.files[i].path;
    }

    auto manifest = read_json(ra.manifest);
    EXPECT_EQ(manifest.at("files").size(), count_files(a.output_dir) - 1);
    EXPECT_EQ(manifest.at("config_sha256"), read_json(rb.manifest).at("config_sha256"));
    EXPECT_EQ(manifest.at("seed"), a.seed);
    for (const auto& f : manifest.at("files")) {
        const auto path = a.output_dir / f.at("path").get<std::string>();
        ASSERT_TRUE(fs::exists(path)) << path;
        EXPECT_EQ(fs::file_size(path), f.at("bytes").get<std::uintmax_t>());
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        EXPECT_EQ(sha256_hex(bytes), f.at("sha256").get<std::string>());
    }
    EXPECT_TRUE(fs::exists(a.output_dir / "report" / "index.json"));
}

TEST(Pipeline, Sha256KnownVector) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}
