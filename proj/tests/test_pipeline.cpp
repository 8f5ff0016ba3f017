// Copyright (C) 2026 The implant authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "json.hpp"
#include "implant/archive.hpp"
#include "implant/config.hpp"
#include "implant/pipeline.hpp"
#include "test_util.hpp"

using namespace implant;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

fs::path shared_cache() {
    const char* base = std::getenv("IMPLANT_TEST_TMP");
    return fs::path(base ? base : fs::temp_directory_path().string()) / "implant-test-pipeline-cache";
}

// Renders the fixed two-object scene into `dir` and returns a small-scale config.
ProjectConfig write_project(const fs::path& dir, int n_objects = 2) {
    const RenderedScene rs = render_scene(implant::testing::fixed_scene(), 64);
    save_image(rs.image, dir / "scene.png");
    save_mask(rs.masks[0], dir / "square_mask.png");
    save_mask(rs.masks[1], dir / "ring_mask.png");
    ProjectConfig c;
    c.output_dir = dir / "out";
    c.cache_dir = shared_cache();
    c.objects.push_back({dir / "scene.png", dir / "square_mask.png", "square", "[sq*]"});
    if (n_objects > 1) c.objects.push_back({dir / "scene.png", dir / "ring_mask.png", "ring", "[rg*]"});
    c.proto.max_steps = 20;
    c.finetune.steps = 4;
    c.finetune.learning_rate = 1e-2;
    c.generate.steps = 5;
    c.backend.pretrain.codec_steps = 40;
    c.backend.pretrain.clip_steps = 20;
    c.backend.pretrain.unet_steps = 40;
    c.backend.pretrain.latent_stat_samples = 16;
    c.set_seed(3);
    c.save(dir / "project.json");
    return c;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(IMPLANT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

// ---- config

TEST(ProjectConfig, RoundTripIsStable) {
    const auto dir = implant::testing::temp_dir("cfg-roundtrip");
    const ProjectConfig c = write_project(dir);
    const ProjectConfig back = ProjectConfig::load(dir / "project.json");
    EXPECT_EQ(back.to_json(), c.to_json());
    back.save(dir / "again.json");
    EXPECT_EQ(slurp(dir / "again.json"), slurp(dir / "project.json"));
    EXPECT_EQ(back.finetune.seed, 3u);
    EXPECT_EQ(back.proto.seed, 3u);
}

TEST(ProjectConfig, DefaultsMatchTheDocumentedSetup) {
    const ProjectConfig c = ProjectConfig::from_json(R"({"objects": []})");
    EXPECT_EQ(c.finetune.learning_rate, 1e-4);
    EXPECT_EQ(c.finetune.steps, 100);
    EXPECT_EQ(c.finetune.batch_size, 1);
    EXPECT_EQ(c.finetune.class_reg.alpha_cl, 1.0);
    EXPECT_EQ(c.finetune.class_reg.p_cl, 1.0);
    EXPECT_EQ(c.finetune.k, 2);
    EXPECT_EQ(c.proto.n_tokens, 4);
    EXPECT_EQ(c.finetune.lora.rank, 4);
}

TEST(ProjectConfig, RelativePathsResolveAgainstTheConfigFile) {
    const auto dir = implant::testing::temp_dir("cfg-relative");
    write_project(dir);
    std::ofstream(dir / "rel.json") << R"({"objects": [{"image_path": "scene.png", "mask_path": "ring_mask.png",
        "class_name": "ring", "identifier": "[rg*]"}]})";
    const ProjectConfig c = ProjectConfig::load(dir / "rel.json");
    EXPECT_EQ(c.objects[0].image_path, dir / "scene.png");
    EXPECT_EQ(c.output_dir, dir / "implant-out");
}

TEST(ProjectConfig, Rejections) {
    const auto dir = implant::testing::temp_dir("cfg-reject");
    write_project(dir);
    auto expect_reject = [&](const std::string& text) {
        std::ofstream(dir / "bad.json") << text;
        EXPECT_THROW(ProjectConfig::load(dir / "bad.json"), ConfigError) << text;
    };
    expect_reject("{not json");
    expect_reject(R"({"objects": [], "bogus": 1})");
    expect_reject(R"({"objects": []})");
    const std::string obj = R"({"image_path": "scene.png", "mask_path": "ring_mask.png", "class_name": "ring", "identifier": )";
    expect_reject(R"({"objects": [)" + obj + R"("ring"}]})");
    expect_reject(R"({"objects": [)" + obj + R"("[a]"}, )" + obj + R"("[a]"}]})");
    expect_reject(R"({"objects": [{"image_path": "scene.png", "mask_path": "nope.png", "class_name": "ring", "identifier": "[a]"}]})");
    expect_reject(R"({"objects": [)" + obj + R"("[a]"}], "finetune": {"steps": 0}})");
    expect_reject(R"({"objects": [)" + obj + R"("[a]"}], "generate": {"steps": 500}})");
    expect_reject(R"({"objects": [)" + obj + R"("[a]"}], "eval": {"kid_estimator": "fancy"}})");
    EXPECT_THROW(ProjectConfig::load(dir / "absent.json"), ConfigError);
}

// ---- pipeline stages

TEST(Pipeline, MissingMaskIsNamedBeforeTraining) {
    const auto dir = implant::testing::temp_dir("pipe-missing");
    ProjectConfig c = write_project(dir);
    fs::remove(dir / "ring_mask.png");
    try {
        cmd_finetune(c, {{}, true, {}});
        FAIL();
    } catch (const PipelineError& e) {
        EXPECT_NE(std::string(e.what()).find("ring_mask.png"), std::string::npos);
    }
    EXPECT_FALSE(fs::exists(bundle_dir(c)));
}

TEST(Pipeline, InitEmbeddingRowsDeterminismAndOrder) {
    const auto dir = implant::testing::temp_dir("pipe-init");
    ProjectConfig c = write_project(dir);
    const auto r1 = cmd_init_embedding(c);
    ASSERT_EQ(r1.rows.size(), 2u);
    EXPECT_EQ(r1.rows[0].identifier, "[sq*]");
    const std::string bytes = slurp(r1.archive);
    EXPECT_EQ(TensorArchive::load(r1.archive).names_with_prefix("prompt_embedding/").size(), 2u);
    EXPECT_THROW(cmd_init_embedding(c), PipelineError);
    const auto r2 = cmd_init_embedding(c, {true, {}});
    EXPECT_EQ(slurp(r2.archive), bytes);

    ProjectConfig swapped = c;
    std::swap(swapped.objects[0], swapped.objects[1]);
    swapped.output_dir = dir / "swapped";
    const auto r3 = cmd_init_embedding(swapped);
    EXPECT_EQ(r3.rows[0].identifier, r1.rows[1].identifier);
    EXPECT_EQ(r3.rows[0].final_loss, r1.rows[1].final_loss);
    EXPECT_EQ(r3.rows[1].final_loss, r1.rows[0].final_loss);
    EXPECT_EQ(TensorArchive::load(r3.archive).get("prompt_embedding/[rg*]"), TensorArchive::load(r1.archive).get("prompt_embedding/[rg*]"));

    const auto report = nlohmann::json::parse(slurp(embeddings_dir(c) / "report.json"));
    ASSERT_EQ(report.size(), 2u);
    EXPECT_EQ(report[0].at("identifier"), "[sq*]");
}

TEST(Pipeline, SingleObjectInitHasOneRow) {
    const auto dir = implant::testing::temp_dir("pipe-init-one");
    const auto r = cmd_init_embedding(write_project(dir, 1));
    EXPECT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(TensorArchive::load(r.archive).names_with_prefix("prompt_embedding/").size(), 1u);
}

TEST(Pipeline, FinetuneNeedsStageOneOrInitFlag) {
    const auto dir = implant::testing::temp_dir("pipe-ft-missing");
    const ProjectConfig c = write_project(dir);
    try {
        cmd_finetune(c);
        FAIL();
    } catch (const PipelineError& e) {
        EXPECT_NE(std::string(e.what()).find("init-embedding"), std::string::npos);
    }
}

TEST(Pipeline, EndToEndArtifactsAreDeterministic) {
    const auto dir = implant::testing::temp_dir("pipe-e2e");
    ProjectConfig c = write_project(dir);
    FinetuneOptions fo;
    fo.auto_init = true;
    const auto ft = cmd_finetune(c, fo);
    EXPECT_EQ(ft.records.size(), 4u);
    for (const char* f : {"adapters.safetensors", "manifest.json", "train_log.jsonl", "checkpoint.safetensors", "config.json"})
        EXPECT_TRUE(fs::exists(ft.bundle / f)) << f;
    const auto manifest = nlohmann::json::parse(slurp(ft.bundle / "manifest.json"));
    EXPECT_EQ(manifest.at("targets").size(), 8u);
    EXPECT_EQ(manifest.at("identifiers").size(), 2u);
    const std::string adapters = slurp(ft.bundle / "adapters.safetensors");
    EXPECT_THROW(cmd_finetune(c, fo), PipelineError);

    ProjectConfig again = c;
    again.output_dir = dir / "out2";
    cmd_finetune(again, fo);
    EXPECT_EQ(slurp(bundle_dir(again) / "adapters.safetensors"), adapters);
    EXPECT_EQ(slurp(bundle_dir(again) / "train_log.jsonl"), slurp(ft.bundle / "train_log.jsonl"));

    const auto g1 = cmd_generate(c, "a photo of [sq*] and [rg*]", 7, 2);
    ASSERT_EQ(g1.size(), 2u);
    EXPECT_EQ(g1[1].seed, 8u);
    const std::string png = slurp(g1[0].path);
    const auto sidecar = nlohmann::json::parse(slurp(generate_dir(c) / "seed7.json"));
    EXPECT_EQ(sidecar.at("prompt"), "a photo of [sq*] and [rg*]");
    EXPECT_EQ(sidecar.at("seed"), 7);
    EXPECT_THROW(cmd_generate(c, "a photo of [sq*]", 7, 1), PipelineError);
    const auto g2 = cmd_generate(c, "a photo of [sq*] and [rg*]", 7, 1, {true, {}});
    EXPECT_EQ(slurp(g2[0].path), png);

    try {
        cmd_generate(c, "a photo of [ghost*]", 0, 1, {true, {}});
        FAIL();
    } catch (const PipelineError& e) {
        EXPECT_NE(std::string(e.what()).find("[ghost*]"), std::string::npos);
    }

    c.eval.prompts = {"a photo of [sq*]", "a photo of [rg*] on the grass"};
    const auto ev = cmd_evaluate(c);
    EXPECT_EQ(ev.report.n_images, 4);
    EXPECT_EQ(ev.report.n_prompts, 2);
    EXPECT_NEAR(ev.reference_self_ia, 1.0, 1e-12);
    EXPECT_GE(ev.report.ia, -1.0);
    EXPECT_LE(ev.report.ta, 1.0);
    const std::string csv = slurp(eval_dir(c) / "report.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "IA,TA,KID");
    const auto rep = nlohmann::json::parse(slurp(eval_dir(c) / "report.json"));
    EXPECT_EQ(rep.at("diagnostics").at("reference_self_ia").get<double>(), 1.0);
}

TEST(Pipeline, ResumeFromBundleCheckpoint) {
    const auto dir = implant::testing::temp_dir("pipe-resume");
    ProjectConfig c = write_project(dir, 1);
    FinetuneOptions fo;
    fo.auto_init = true;
    cmd_finetune(c, fo);
    ProjectConfig longer = c;
    longer.finetune.steps = 6;
    FinetuneOptions ro;
    ro.resume = bundle_dir(c) / "checkpoint.safetensors";
    const auto r = cmd_finetune(longer, ro);
    EXPECT_EQ(r.records.size(), 6u);

    ProjectConfig straight = longer;
    straight.output_dir = dir / "straight";
    const auto s = cmd_finetune(straight, fo);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(r.records[i].loss_total, s.records[i].loss_total, 1e-6);
}

TEST(Pipeline, DefaultEvalPrompts) {
    const auto dir = implant::testing::temp_dir("pipe-prompts");
    const ProjectConfig two = write_project(dir);
    const auto p = default_eval_prompts(two);
    ASSERT_FALSE(p.empty());
    EXPECT_EQ(p[0], "a photo of [sq*] and [rg*]");
    EXPECT_EQ(default_eval_prompts(write_project(dir, 1)).front(), "a photo of [sq*]");
}

// ---- command line

TEST(Cli, ExitCodes) {
    const auto dir = implant::testing::temp_dir("cli");
    write_project(dir);
    const std::string cfg = "--config " + (dir / "project.json").string() + " -q";
    EXPECT_EQ(run_cli("--help"), 0);
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("finetune --config " + (dir / "absent.json").string()), 2);
    EXPECT_EQ(run_cli("finetune " + cfg), 2);
    EXPECT_EQ(run_cli("init-embedding " + cfg), 0);
    EXPECT_EQ(run_cli("init-embedding " + cfg), 2);
    EXPECT_EQ(run_cli("init-embedding --force " + cfg), 0);
    EXPECT_EQ(run_cli("finetune " + cfg), 0);
    EXPECT_EQ(run_cli("generate --prompt 'a photo of [sq*]' --seed 2 " + cfg), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "generate" / "seed2.png"));
    EXPECT_EQ(run_cli("generate --force --prompt 'a photo of [ghost*]' " + cfg), 2);
    EXPECT_EQ(run_cli("evaluate " + cfg), 0);
    EXPECT_TRUE(fs::exists(dir / "out" / "eval" / "report.csv"));

    std::string ckpt = slurp(dir / "out" / "bundle" / "checkpoint.safetensors");
    ckpt[ckpt.size() / 2] ^= 0x20;
    std::ofstream(dir / "bad.safetensors", std::ios::binary) << ckpt;
    EXPECT_EQ(run_cli("finetune --resume " + (dir / "bad.safetensors").string() + " " + cfg), 3);
}
