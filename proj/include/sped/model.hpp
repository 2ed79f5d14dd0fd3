#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "sped/numerics.hpp"

namespace sped {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

struct ModelConfig {
    int hidden_dim = 64;
    int key_dim = 96;
    int num_layers = 4;
    std::vector<int> edit_layers = {1, 2};
    int vocab_size = 512;
    std::uint64_t seed = 0;

    void validate() const {
        if (hidden_dim < 2 || key_dim < 2 || vocab_size < 2)
            fail(errc::invalid_config, "hidden_dim, key_dim and vocab_size must be >= 2");
        if (num_layers < 1) fail(errc::invalid_config, "num_layers must be >= 1");
        if (edit_layers.empty()) fail(errc::invalid_config, "edit_layers must be non-empty");
        int prev = -1;
        for (int l : edit_layers) {
            if (l <= prev) fail(errc::invalid_config, "edit_layers must be strictly increasing");
            if (l < 0 || l >= num_layers)
                fail(errc::invalid_config, "edit layer " + std::to_string(l) + " outside [0, " +
                                               std::to_string(num_layers) + ")");
            prev = l;
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

// Deterministic pseudo-word list shared by every model and dataset of a given
// size: answers are resolved by string, so vocabulary identity must not
// depend on a model seed.
inline std::vector<std::string> make_vocabulary(int n) {
    static const std::string cons = "bdfgklmnprstvz";
    static const std::string vow = "aeiou";
    const std::uint64_t n_syllables = cons.size() * vow.size();
    const std::uint64_t space = n_syllables * n_syllables * n_syllables;
    if (n < 0 || std::uint64_t(n) > space)
        fail(errc::invalid_config, "vocab_size too large for the word space");
    Rng rng(fnv1a("sped-vocabulary"));
    std::set<std::uint64_t> used;
    std::vector<std::string> words;
    words.reserve(n);
    while (words.size() < std::size_t(n)) {
        std::uint64_t code = rng.next_below(space);
        if (!used.insert(code).second) continue;
        std::string w;
        for (int s = 0; s < 3; ++s) {
            std::uint64_t syl = code % n_syllables;
            code /= n_syllables;
            w += cons[syl / vow.size()];
            w += vow[syl % vow.size()];
        }
        words.push_back(w);
    }
    return words;
}

struct ModelState {
    ModelConfig config;
    std::vector<Mat> memories;    // L editable matrices, d_h x d_k
    std::vector<Mat> key_a;       // frozen, d_k x d_h
    std::vector<Vec> key_b;       // frozen, d_k
    Mat answer_embeddings;        // frozen, vocab x d_h, unit rows
    std::vector<std::string> vocab;
    std::unordered_map<std::string, int> vocab_index;
    std::uint64_t token_seed = 0;

    int answer_id(const std::string& text) const {
        auto it = vocab_index.find(text);
        if (it == vocab_index.end())
            fail(errc::vocabulary_miss, "answer '" + text + "' is not in the vocabulary");
        return it->second;
    }

    bool has_answer(const std::string& text) const { return vocab_index.count(text) != 0; }
};

struct ForwardTrace {
    std::vector<Vec> h;  // h_0 .. h_L
    std::vector<Vec> k;  // k_1 .. k_L (index l-1 holds layer l's key)
};

struct Prediction {
    int answer_id = 0;
    double similarity = 0.0;
    double runner_up_margin = 0.0;
};

inline ModelState init_model(const ModelConfig& config) {
    config.validate();
    ModelState st;
    st.config = config;
    const int dh = config.hidden_dim, dk = config.key_dim, L = config.num_layers;
    const double scale = 1.0 / std::sqrt(double(dh));

    Rng rng(derive_seed(config.seed, "model-frozen"));
    st.memories.assign(L, Mat::Zero(dh, dk));
    st.key_a.reserve(L);
    st.key_b.reserve(L);
    for (int l = 0; l < L; ++l) {
        Mat a(dk, dh);
        for (int r = 0; r < dk; ++r)
            for (int c = 0; c < dh; ++c) a(r, c) = scale * rng.next_gaussian();
        Vec b(dk);
        for (int r = 0; r < dk; ++r) b(r) = scale * rng.next_gaussian();
        st.key_a.push_back(std::move(a));
        st.key_b.push_back(std::move(b));
    }
    st.answer_embeddings.resize(config.vocab_size, dh);
    for (int r = 0; r < config.vocab_size; ++r) {
        for (int c = 0; c < dh; ++c) st.answer_embeddings(r, c) = rng.next_gaussian();
        st.answer_embeddings.row(r).normalize();
    }
    st.vocab = make_vocabulary(config.vocab_size);
    for (int i = 0; i < config.vocab_size; ++i) st.vocab_index[st.vocab[i]] = i;
    st.token_seed = derive_seed(config.seed, "model-tokens");
    return st;
}

inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch)))
            cur += char(std::tolower(static_cast<unsigned char>(ch)));
        else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline bool is_stopword(const std::string& tok) {
    static const std::unordered_set<std::string> kStop = {
        "the", "a", "an", "of", "in", "on", "at", "to", "by",
        "for", "and", "or", "is", "was", "were", "did", "do", "does",
    };
    return kStop.count(tok) != 0;
}

// Unit-norm vector deterministically derived from a token.
inline Vec token_vector(const ModelState& st, const std::string& token) {
    Rng rng(st.token_seed ^ fnv1a(token));
    rng.next_u64();  // decouple streams of tokens whose hashes are close
    Vec v(st.config.hidden_dim);
    for (int i = 0; i < st.config.hidden_dim; ++i) v(i) = rng.next_gaussian();
    double n = v.norm();
    return n > 0 ? Vec(v / n) : v;
}

// h0 = normalize(embed(subject) + relation(question)); the relation hashes
// the question's non-subject content words so subject identity and phrasing
// enter as separable components.
inline Vec encode_prompt(const ModelState& st, const std::string& question,
                         const std::string& subject) {
    std::vector<std::string> subj_toks = tokenize(subject);
    if (subj_toks.empty()) fail(errc::empty_subject, "subject is empty");

    Vec subj = Vec::Zero(st.config.hidden_dim);
    std::unordered_set<std::string> subj_set;
    for (const auto& t : subj_toks) {
        subj += token_vector(st, t);
        subj_set.insert(t);
    }
    if (subj.norm() == 0) fail(errc::empty_subject, "subject hashes to the zero vector");
    subj.normalize();

    Vec rel = Vec::Zero(st.config.hidden_dim);
    bool any = false;
    for (const auto& t : tokenize(question)) {
        if (subj_set.count(t) || is_stopword(t)) continue;
        rel += token_vector(st, t);
        any = true;
    }
    if (!any || rel.norm() == 0) return subj;
    rel.normalize();
    Vec h0 = subj + rel;
    h0.normalize();
    return h0;
}

inline ForwardTrace forward(const ModelState& st, const Vec& h0) {
    if (h0.size() != st.config.hidden_dim)
        fail(errc::shape_mismatch, "forward: h0 has dimension " + std::to_string(h0.size()) +
                                       ", expected " + std::to_string(st.config.hidden_dim));
    ForwardTrace tr;
    tr.h.reserve(st.config.num_layers + 1);
    tr.k.reserve(st.config.num_layers);
    tr.h.push_back(h0);
    for (int l = 0; l < st.config.num_layers; ++l) {
        Vec k = (st.key_a[l] * tr.h.back() + st.key_b[l]).cwiseMax(0.0);
        tr.h.push_back(tr.h.back() + st.memories[l] * k);
        tr.k.push_back(std::move(k));
    }
    return tr;
}

inline Prediction decode(const ModelState& st, const Vec& hL) {
    if (!hL.allFinite()) fail(errc::non_finite, "decode: hL contains NaN/Inf");
    if (hL.size() != st.config.hidden_dim)
        fail(errc::shape_mismatch, "decode: hL has dimension " + std::to_string(hL.size()));
    double n = hL.norm();
    if (n == 0.0) return {0, 0.0, 0.0};
    Vec sims = st.answer_embeddings * (hL / n);
    int best = 0;
    for (int i = 1; i < sims.size(); ++i)
        if (sims(i) > sims(best)) best = i;
    double second = -2.0;
    for (int i = 0; i < sims.size(); ++i)
        if (i != best && sims(i) > second) second = sims(i);
    return {best, sims(best), sims(best) - second};
}

inline Prediction decode_prompt(const ModelState& st, const std::string& question,
                                const std::string& subject) {
    return decode(st, forward(st, encode_prompt(st, question, subject)).h.back());
}

// ---- checkpoint persistence -------------------------------------------------
//
// Layout: "SPED" | u16 version | u32 header length | header (JSON text:
// config + seed + shapes) | per layer: u32 rows, u32 cols, row-major f64 |
// u64 FNV-1a checksum of all preceding bytes.

namespace detail {

constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
inline void put_raw(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
inline T get_raw(const std::string& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size())
        fail(errc::checksum_mismatch, "checkpoint truncated");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

inline nlohmann::ordered_json config_to_json(const ModelConfig& c) {
    return {{"hidden_dim", c.hidden_dim}, {"key_dim", c.key_dim},
            {"num_layers", c.num_layers}, {"edit_layers", c.edit_layers},
            {"vocab_size", c.vocab_size}, {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.key_dim = j.at("key_dim").get<int>();
    c.num_layers = j.at("num_layers").get<int>();
    c.edit_layers = j.at("edit_layers").get<std::vector<int>>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline void put_matrix(std::string& buf, const Mat& m) {
    put_raw<std::uint32_t>(buf, std::uint32_t(m.rows()));
    put_raw<std::uint32_t>(buf, std::uint32_t(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) put_raw<double>(buf, m(r, c));
}

inline Mat get_matrix(const std::string& buf, std::size_t& off) {
    auto rows = get_raw<std::uint32_t>(buf, off);
    auto cols = get_raw<std::uint32_t>(buf, off);
    Mat m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = get_raw<double>(buf, off);
    return m;
}

inline void write_file_checksummed(const std::string& path, std::string body) {
    put_raw<std::uint64_t>(body, fnv1a(body.data(), body.size()));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io_failure, "cannot open '" + path + "' for writing");
    out.write(body.data(), std::streamsize(body.size()));
    if (!out) fail(errc::io_failure, "short write to '" + path + "'");
}

inline std::string read_file_checksummed(const std::string& path, const char magic[4]) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io_failure, "cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 4 || std::memcmp(buf.data(), magic, 4) != 0)
        fail(errc::format_version_mismatch,
             "'" + path + "' does not start with the expected magic bytes");
    if (buf.size() < 12) fail(errc::checksum_mismatch, "'" + path + "' is truncated");
    std::uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    if (stored != fnv1a(buf.data(), buf.size() - 8))
        fail(errc::checksum_mismatch, "checksum mismatch in '" + path + "'");
    buf.resize(buf.size() - 8);
    return buf;
}

}  // namespace detail

inline void save_checkpoint(const ModelState& st, const std::string& path) {
    std::string buf = "SPED";
    detail::put_raw<std::uint16_t>(buf, detail::kCheckpointVersion);
    nlohmann::ordered_json header = detail::config_to_json(st.config);
    std::string htext = header.dump();
    detail::put_raw<std::uint32_t>(buf, std::uint32_t(htext.size()));
    buf += htext;
    for (const Mat& w : st.memories) detail::put_matrix(buf, w);
    detail::write_file_checksummed(path, std::move(buf));
}

inline ModelState load_checkpoint(const std::string& path) {
    std::string buf = detail::read_file_checksummed(path, "SPED");
    std::size_t off = 4;
    auto version = detail::get_raw<std::uint16_t>(buf, off);
    if (version != detail::kCheckpointVersion)
        fail(errc::format_version_mismatch,
             "checkpoint version " + std::to_string(version) + ", expected " +
                 std::to_string(detail::kCheckpointVersion));
    auto hlen = detail::get_raw<std::uint32_t>(buf, off);
    if (off + hlen > buf.size()) fail(errc::checksum_mismatch, "checkpoint truncated");
    ModelConfig config;
    try {
        config = detail::config_from_json(nlohmann::json::parse(buf.substr(off, hlen)));
    } catch (const nlohmann::json::exception& e) {
        fail(errc::parse_error, std::string("checkpoint header: ") + e.what());
    }
    off += hlen;
    ModelState st = init_model(config);
    for (int l = 0; l < config.num_layers; ++l) {
        Mat w = detail::get_matrix(buf, off);
        if (w.rows() != config.hidden_dim || w.cols() != config.key_dim)
            fail(errc::parse_error, "checkpoint memory " + std::to_string(l) + " has shape " +
                                        std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
        st.memories[l] = std::move(w);
    }
    if (off != buf.size()) fail(errc::parse_error, "trailing bytes in checkpoint");
    return st;
}

}  // namespace sped
