#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sped/knowledge.hpp"
#include "sped/model.hpp"
#include "support/oracles.hpp"

using namespace sped;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config(std::uint64_t seed = 5) {
    ModelConfig c;
    c.hidden_dim = 16;
    c.key_dim = 24;
    c.num_layers = 3;
    c.edit_layers = {0, 1};
    c.vocab_size = 32;
    c.seed = seed;
    return c;
}

fs::path temp_file(const char* name) {
    return fs::temp_directory_path() / (std::string("sped_test_") + name);
}

}  // namespace

TEST_CASE("init_model is deterministic per seed") {
    ModelState a = init_model(small_config(9));
    ModelState b = init_model(small_config(9));
    CHECK(a.answer_embeddings == b.answer_embeddings);
    for (int l = 0; l < a.config.num_layers; ++l) {
        CHECK(a.key_a[l] == b.key_a[l]);
        CHECK(a.key_b[l] == b.key_b[l]);
        CHECK(a.memories[l] == b.memories[l]);
        CHECK(a.memories[l].norm() == 0.0);
    }
    ModelState c = init_model(small_config(10));
    CHECK(a.answer_embeddings != c.answer_embeddings);
}

TEST_CASE("answer embedding rows are unit norm") {
    ModelState st = init_model(small_config());
    for (int r = 0; r < st.config.vocab_size; ++r)
        CHECK(std::abs(st.answer_embeddings.row(r).norm() - 1.0) < 1e-12);
}

TEST_CASE("config validation rejects bad edit layers") {
    ModelConfig c = small_config();
    c.edit_layers = {};
    CHECK_THROWS_AS(init_model(c), error);
    c.edit_layers = {1, 1};
    CHECK_THROWS_AS(init_model(c), error);
    c.edit_layers = {5};
    CHECK_THROWS_AS(init_model(c), error);
}

TEST_CASE("zero memories forward is the identity") {
    ModelState st = init_model(small_config());
    Vec h0 = encode_prompt(st, "Where did Kora stash the brass lantern?", "Kora");
    ForwardTrace tr = forward(st, h0);
    CHECK(tr.h.back() == h0);
}

TEST_CASE("encode is deterministic and relation-sensitive") {
    ModelState st = init_model(small_config());
    Vec a = encode_prompt(st, "Why did Mira cross the river?", "Mira");
    Vec b = encode_prompt(st, "Why did Mira cross the river?", "Mira");
    CHECK(a == b);
    CHECK(std::abs(a.norm() - 1.0) < 1e-12);
    Vec c = encode_prompt(st, "When did Mira greet the harbor?", "Mira");
    CHECK(a.dot(c) < 1.0 - 1e-6);
}

TEST_CASE("encode rejects an empty subject") {
    ModelState st = init_model(small_config());
    CHECK_THROWS_MATCHES(encode_prompt(st, "Why?", "  "), error,
                         Catch::Matchers::Predicate<error>([](const error& e) {
                             return e.code() == errc::empty_subject;
                         }));
}

TEST_CASE("rephrase encodings stay close at paraphrase strength 0.2") {
    ModelConfig mc;
    mc.seed = 77;
    ModelState st = init_model(mc);
    GeneratorConfig gc;
    gc.n_items = 100;
    gc.paraphrase_strength = 0.2;
    gc.seed = 77;
    auto items = generate_synthetic(gc);

    double mean = 0, lo = 1;
    for (const auto& it : items) {
        Vec q = encode_prompt(st, it.question, it.subject);
        Vec r = encode_prompt(st, it.rephrase, it.subject);
        double cos = q.dot(r);
        mean += cos;
        lo = std::min(lo, cos);
    }
    mean /= items.size();
    // regression fixture: measured mean 0.953, minimum 0.875 at this seed
    CHECK(mean >= 0.9);
    CHECK(lo >= 0.85);
}

TEST_CASE("forward matches a straight-line reimplementation") {
    ModelState st = init_model(small_config(21));
    Rng rng(3);
    for (auto& w : st.memories) w = 0.3 * oracles::random_matrix(rng, w.rows(), w.cols());
    Vec h0 = encode_prompt(st, "How did Pell mend the torn sail?", "Pell");
    ForwardTrace tr = forward(st, h0);

    Vec h = h0;  // duplicate naive forward, no shared code path
    for (int l = 0; l < st.config.num_layers; ++l) {
        Vec z = st.key_a[l] * h + st.key_b[l];
        for (int i = 0; i < z.size(); ++i) z(i) = z(i) > 0 ? z(i) : 0.0;
        CHECK(z == tr.k[l]);
        h = h + st.memories[l] * z;
        CHECK(h == tr.h[l + 1]);
    }
}

TEST_CASE("decode on an exact embedding row") {
    ModelState st = init_model(small_config());
    Vec h = st.answer_embeddings.row(7).transpose();
    Prediction p = decode(st, h);
    CHECK(p.answer_id == 7);
    CHECK(p.similarity == Catch::Approx(1.0).margin(1e-12));
    CHECK(p.runner_up_margin > 0);
}

TEST_CASE("decode of the zero vector ties down to index zero") {
    ModelState st = init_model(small_config());
    Prediction p = decode(st, Vec::Zero(st.config.hidden_dim));
    CHECK(p.answer_id == 0);
    CHECK(p.similarity == 0.0);
}

TEST_CASE("decode matches a brute-force argmax") {
    ModelState st = init_model(small_config(33));
    Rng rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        Vec h(st.config.hidden_dim);
        for (int i = 0; i < h.size(); ++i) h(i) = rng.next_gaussian();
        Prediction p = decode(st, h);
        int best = 0;
        double best_sim = -2;
        for (int v = 0; v < st.config.vocab_size; ++v) {
            double sim = st.answer_embeddings.row(v).dot(h) / h.norm();
            if (sim > best_sim) {
                best_sim = sim;
                best = v;
            }
        }
        CHECK(p.answer_id == best);
        CHECK(p.similarity == Catch::Approx(best_sim).margin(1e-12));
    }
}

TEST_CASE("decode argmax is scale covariant") {
    ModelState st = init_model(small_config(34));
    Rng rng(9);
    Vec h(st.config.hidden_dim);
    for (int i = 0; i < h.size(); ++i) h(i) = rng.next_gaussian();
    int id = decode(st, h).answer_id;
    for (double c : {1e-6, 0.5, 3.0, 1e6})
        CHECK(decode(st, Vec(c * h)).answer_id == id);
}

TEST_CASE("decode rejects non-finite input") {
    ModelState st = init_model(small_config());
    Vec h = Vec::Zero(st.config.hidden_dim);
    h(0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(decode(st, h), error);
}

TEST_CASE("checkpoint round trip is bit exact") {
    ModelState st = init_model(small_config(55));
    Rng rng(4);
    for (auto& w : st.memories) w = oracles::random_matrix(rng, w.rows(), w.cols());
    auto path = temp_file("roundtrip.ckpt");
    save_checkpoint(st, path.string());
    ModelState back = load_checkpoint(path.string());
    CHECK(back.config == st.config);
    for (int l = 0; l < st.config.num_layers; ++l) CHECK(back.memories[l] == st.memories[l]);
    fs::remove(path);
}

TEST_CASE("truncated checkpoint is rejected") {
    ModelState st = init_model(small_config(56));
    auto path = temp_file("truncated.ckpt");
    save_checkpoint(st, path.string());
    auto size = fs::file_size(path);
    fs::resize_file(path, size - 9);
    CHECK_THROWS_MATCHES(load_checkpoint(path.string()), error,
                         Catch::Matchers::Predicate<error>([](const error& e) {
                             return e.code() == errc::checksum_mismatch;
                         }));
    fs::remove(path);
}

TEST_CASE("bit flip inside a stored memory is detected") {
    ModelState st = init_model(small_config(57));
    Rng rng(5);
    for (auto& w : st.memories) w = oracles::random_matrix(rng, w.rows(), w.cols());
    auto path = temp_file("bitflip.ckpt");
    save_checkpoint(st, path.string());

    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(-64, std::ios::end);  // inside the last matrix block
    char byte;
    f.seekg(f.tellp());
    f.read(&byte, 1);
    byte = char(byte ^ 0x10);
    f.seekp(-64, std::ios::end);
    f.write(&byte, 1);
    f.close();

    CHECK_THROWS_MATCHES(load_checkpoint(path.string()), error,
                         Catch::Matchers::Predicate<error>([](const error& e) {
                             return e.code() == errc::checksum_mismatch;
                         }));
    fs::remove(path);
}

TEST_CASE("foreign files are rejected by magic") {
    auto path = temp_file("foreign.bin");
    std::ofstream(path) << "definitely not a checkpoint";
    CHECK_THROWS_MATCHES(load_checkpoint(path.string()), error,
                         Catch::Matchers::Predicate<error>([](const error& e) {
                             return e.code() == errc::format_version_mismatch;
                         }));
    fs::remove(path);
}
