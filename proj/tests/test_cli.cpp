#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "sped/config.hpp"

using namespace sped;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("sped_cli_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args) {
    std::string cmd = std::string(SPED_CLI_PATH) + " " + args + " >/dev/null 2>/dev/null";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

std::string common_flags(const TempDir& dir) {
    std::string d = dir.path.string();
    return "--seed 12 --threads 1"
           " --model.hidden_dim 48 --model.key_dim 96 --model.vocab_size 128"
           " --generator.n_items 16 --generator.n_anchors 6"
           " --paths.dataset " + d + "/dataset.jsonl" +
           " --paths.anchors " + d + "/anchors.jsonl" +
           " --paths.checkpoint " + d + "/base.ckpt" +
           " --paths.preserved " + d + "/preserved.spkv" +
           " --paths.edited_checkpoint " + d + "/edited.ckpt" +
           " --paths.reports_dir " + d + "/reports";
}

}  // namespace

TEST_CASE("cli pipeline runs end to end") {
    TempDir dir;
    std::string flags = common_flags(dir);
    REQUIRE(run_cli(flags + " gen-data") == 0);
    CHECK(fs::exists(dir.path / "dataset.jsonl"));
    CHECK(fs::exists(dir.path / "anchors.jsonl"));
    CHECK(fs::exists(dir.path / "dataset.jsonl.manifest.json"));

    REQUIRE(run_cli(flags + " install") == 0);
    CHECK(fs::exists(dir.path / "base.ckpt"));
    CHECK(fs::exists(dir.path / "preserved.spkv"));

    REQUIRE(run_cli(flags + " diagnose") == 0);
    std::string diag = slurp(dir.path / "reports/diagnosis.tsv");
    CHECK(diag.find("item_id\tpopularity") == 0);
    CHECK(diag.find("Hard") != std::string::npos);

    REQUIRE(run_cli(flags + " edit --method alphaedit --strategy adaptive") == 0);
    CHECK(fs::exists(dir.path / "edited.ckpt"));
    CHECK(fs::exists(dir.path / "reports/audit.jsonl"));

    REQUIRE(run_cli(flags + " eval") == 0);
    std::string summary = slurp(dir.path / "reports/eval_summary.tsv");
    CHECK(summary.find("reliability") != std::string::npos);
    CHECK(summary.find("locality") != std::string::npos);
}

TEST_CASE("cli refuses to overwrite without --force") {
    TempDir dir;
    std::string flags = common_flags(dir);
    REQUIRE(run_cli(flags + " gen-data") == 0);
    CHECK(run_cli(flags + " gen-data") == 2);  // ExistsError is a data error
    CHECK(run_cli(flags + " gen-data --force") == 0);
}

TEST_CASE("cli maps error classes to exit codes") {
    TempDir dir;
    std::string flags = common_flags(dir);

    SECTION("usage errors exit 1") {
        CHECK(run_cli(flags + " edit --strategy fixed7") == 1);
        CHECK(run_cli("definitely-not-a-subcommand") == 1);
    }

    SECTION("empty dataset exits 2") {
        std::ofstream(dir.path / "dataset.jsonl").close();
        CHECK(run_cli(flags + " edit --strategy fixed1") == 2);
    }

    SECTION("missing input exits 2") {
        CHECK(run_cli(flags + " diagnose") == 2);
    }
}

TEST_CASE("cli cost prints the calibrated table") {
    TempDir dir;
    std::string flags = common_flags(dir);
    std::string out_file = (dir.path / "cost_out.txt").string();
    std::string cmd = std::string(SPED_CLI_PATH) + " " + flags +
                      " cost --items 2000 --hard-fraction 0.6 > " + out_file + " 2>/dev/null";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    std::string out = slurp(out_file);
    CHECK(out.find("$50.00") != std::string::npos);
    CHECK(out.find("32%") != std::string::npos);
    CHECK(fs::exists(dir.path / "reports/cost_report.tsv"));
}

TEST_CASE("cli reads configuration from an ini file") {
    TempDir dir;
    std::string ini_path = (dir.path / "run.ini").string();
    {
        std::ofstream ini(ini_path);
        ini << "seed=77\n";
        ini << "[generator]\n" << "n_items=5\n" << "n_anchors=3\n";
        ini << "[model]\n" << "hidden_dim=32\n" << "key_dim=64\n" << "vocab_size=64\n";
        ini << "[paths]\n";
        ini << "dataset=" << (dir.path / "d.jsonl").string() << "\n";
        ini << "anchors=" << (dir.path / "a.jsonl").string() << "\n";
    }
    REQUIRE(run_cli("--config " + ini_path + " gen-data") == 0);
    auto items = load_dataset((dir.path / "d.jsonl").string());
    CHECK(items.size() == 5);
}

TEST_CASE("gen-data is reproducible from one configuration") {
    TempDir a, b;
    REQUIRE(run_cli(common_flags(a) + " gen-data") == 0);
    REQUIRE(run_cli(common_flags(b) + " gen-data") == 0);
    CHECK(slurp(a.path / "dataset.jsonl") == slurp(b.path / "dataset.jsonl"));
    CHECK(slurp(a.path / "anchors.jsonl") == slurp(b.path / "anchors.jsonl"));
}
