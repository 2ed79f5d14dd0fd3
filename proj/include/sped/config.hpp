#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "sped/repro.hpp"

namespace sped {

// Resolved run configuration: one global seed fans out to every stochastic
// component, so a config file plus its hash pins an entire run.
struct RunConfig {
    ModelConfig model;
    GeneratorConfig generator;
    int n_anchors = 24;
    InstallOptions install;
    EditConfig editor;
    StrategyPolicy policy;
    CostModel cost;
    BatteryOptions battery;
    double tau = 0.9;

    std::string dataset = "out/dataset.jsonl";
    std::string anchors = "out/anchors.jsonl";
    std::string checkpoint = "out/base.ckpt";
    std::string preserved = "out/preserved.spkv";
    std::string edited_checkpoint = "out/edited.ckpt";
    std::string reports_dir = "out/reports";

    std::uint64_t seed = 0;
    unsigned threads = 0;  // 0: resolve from env / hardware

    void resolve() {
        model.seed = derive_seed(seed, "model");
        generator.seed = derive_seed(seed, "generator");
        generator.vocab_size = model.vocab_size;
        install.sample_seed = derive_seed(seed, "install");
        battery.seed = derive_seed(seed, "battery");
        if (threads == 0) {
            if (const char* env = std::getenv("SPECTRUM_EDIT_THREADS")) {
                long v = std::strtol(env, nullptr, 10);
                if (v >= 1) threads = unsigned(v);
            }
        }
        if (threads == 0) threads = default_threads();
        model.validate();
        generator.validate();
        editor.validate();
        policy.validate();
        cost.validate();
    }

    ReproSetup repro_setup() const {
        ReproSetup s = make_repro_setup(seed);
        s.install.entrench_scale = install.entrench_scale;
        s.editor = editor;
        s.policy = policy;
        s.policy.editor = editor;
        s.battery.size = battery.size;
        s.battery.margin_floor = battery.margin_floor;
        s.tau = tau;
        s.threads = threads;
        return s;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["model"] = {{"hidden_dim", model.hidden_dim}, {"key_dim", model.key_dim},
                      {"num_layers", model.num_layers}, {"edit_layers", model.edit_layers},
                      {"vocab_size", model.vocab_size}};
        j["generator"] = {{"n_items", generator.n_items},
                          {"frac_known", generator.frac_known},
                          {"pv_mu", generator.pv_mu},
                          {"pv_sigma", generator.pv_sigma},
                          {"question_type_mix", generator.question_type_mix},
                          {"paraphrase_strength", generator.paraphrase_strength},
                          {"n_anchors", n_anchors}};
        j["install"] = {{"entrench_scale", install.entrench_scale},
                        {"capacity_fraction", install.capacity_fraction},
                        {"preserved_fraction", install.preserved_fraction}};
        j["editor"] = {{"method", edit_method_name(editor.method)},
                       {"lambda", editor.lambda},
                       {"nullspace_rtol", editor.nullspace_rtol},
                       {"solve_rtol", editor.solve_rtol},
                       {"ft_learning_rate", editor.ft_learning_rate},
                       {"ft_steps", editor.ft_steps},
                       {"passes", editor.passes}};
        j["policy"] = {{"easy_passes", policy.easy_passes}, {"hard_passes", policy.hard_passes}};
        j["cost"] = {{"per_pass_seconds", cost.per_pass_seconds},
                     {"cost_per_hour", cost.cost_per_hour}};
        j["eval"] = {{"battery_size", battery.size},
                     {"battery_margin_floor", battery.margin_floor},
                     {"tau", tau}};
        j["paths"] = {{"dataset", dataset},       {"anchors", anchors},
                      {"checkpoint", checkpoint}, {"preserved", preserved},
                      {"edited_checkpoint", edited_checkpoint},
                      {"reports_dir", reports_dir}};
        j["seed"] = seed;
        return j;
    }

    std::string config_hash() const {
        char buf[20];
        std::snprintf(buf, sizeof buf, "%016llx",
                      (unsigned long long)fnv1a(to_json().dump()));
        return buf;
    }
};

// ---- output bookkeeping --------------------------------------------------------

inline void ensure_fresh(const std::string& path, bool force) {
    if (!force && std::filesystem::exists(path))
        fail(errc::exists, "'" + path + "' already exists (use --force to overwrite)");
    auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

inline void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io_failure, "cannot open '" + path + "' for writing");
    out << content;
    if (!out) fail(errc::io_failure, "short write to '" + path + "'");
}

inline std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io_failure, "cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a(buf.data(), buf.size());
}

// Every subcommand writes a manifest naming its inputs' hash and its outputs'
// checksums; rerunning the same configuration must reproduce every artifact
// marked deterministic byte for byte.
struct Manifest {
    std::string command;
    std::string config_hash;
    std::uint64_t seed = 0;
    nlohmann::ordered_json outputs = nlohmann::ordered_json::array();

    void add(const std::string& path, bool deterministic = true) {
        char sum[20];
        std::snprintf(sum, sizeof sum, "%016llx", (unsigned long long)file_checksum(path));
        outputs.push_back({{"path", path},
                           {"bytes", std::filesystem::file_size(path)},
                           {"fnv1a64", sum},
                           {"deterministic", deterministic}});
    }

    void write(const std::string& path) const {
        nlohmann::ordered_json j = {{"command", command},
                                    {"config_hash", config_hash},
                                    {"seed", seed},
                                    {"outputs", outputs}};
        write_text(path, j.dump(2) + "\n");
    }
};

}  // namespace sped
