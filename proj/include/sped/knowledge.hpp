#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sped/model.hpp"

namespace sped {

struct KnowledgeItem {
    std::string id;
    std::string question;
    std::string subject;
    std::string answer;
    std::string rephrase;
    long long page_views = 0;
    std::optional<std::string> old_answer;

    // The fact the model is expected to hold before any edit.
    const std::string& pre_edit_truth() const { return old_answer ? *old_answer : answer; }
};

inline void validate_item(const KnowledgeItem& it, int line) {
    auto at = [&](const std::string& what) {
        return what + " (item '" + it.id + "', line " + std::to_string(line) + ")";
    };
    if (it.question.find(it.subject) == std::string::npos)
        fail(errc::subject_not_in_question, at("subject does not occur in question"));
    if (it.page_views < 0) fail(errc::parse_error, at("page_views is negative"));
    if (it.old_answer && *it.old_answer == it.answer)
        fail(errc::parse_error, at("old_answer equals answer"));
}

// ---- dataset files (JSON lines, UTF-8) --------------------------------------

inline nlohmann::ordered_json item_to_json(const KnowledgeItem& it) {
    nlohmann::ordered_json j = {{"id", it.id},           {"question", it.question},
                                {"subject", it.subject}, {"answer", it.answer},
                                {"rephrase", it.rephrase}, {"page_views", it.page_views}};
    if (it.old_answer) j["old_answer"] = *it.old_answer;
    return j;
}

inline void save_dataset(const std::vector<KnowledgeItem>& items, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io_failure, "cannot open '" + path + "' for writing");
    for (const auto& it : items) out << item_to_json(it).dump() << '\n';
    if (!out) fail(errc::io_failure, "short write to '" + path + "'");
}

inline std::vector<KnowledgeItem> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io_failure, "cannot open dataset '" + path + "'");
    std::vector<KnowledgeItem> items;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail(errc::parse_error, "line " + std::to_string(lineno) + ": " + e.what());
        }
        KnowledgeItem it;
        auto need = [&](const char* field) -> const nlohmann::json& {
            if (!j.contains(field))
                fail(errc::missing_field,
                     "line " + std::to_string(lineno) + ": missing field '" + field + "'");
            return j.at(field);
        };
        try {
            it.id = need("id").get<std::string>();
            it.question = need("question").get<std::string>();
            it.subject = need("subject").get<std::string>();
            it.answer = need("answer").get<std::string>();
            it.rephrase = need("rephrase").get<std::string>();
            it.page_views = need("page_views").get<long long>();
            if (j.contains("old_answer") && !j.at("old_answer").is_null())
                it.old_answer = j.at("old_answer").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            fail(errc::parse_error, "line " + std::to_string(lineno) + ": " + e.what());
        }
        validate_item(it, lineno);
        items.push_back(std::move(it));
    }
    return items;
}

// ---- synthetic population generator -----------------------------------------

enum class QuestionType { Who = 0, What, When, Where, Which, Why, How, Others };

constexpr std::array<const char*, 8> kQuestionTypeNames = {
    "Who", "What", "When", "Where", "Which", "Why", "How", "Others"};

struct GeneratorConfig {
    int n_items = 200;
    double frac_known = 0.5;
    double pv_mu = 6.0;     // log-normal location of monthly page views
    double pv_sigma = 2.0;  // log-normal scale
    std::array<double, 8> question_type_mix = {0.125, 0.125, 0.125, 0.125,
                                               0.125, 0.125, 0.125, 0.125};
    double paraphrase_strength = 0.2;  // rho
    std::uint64_t seed = 0;
    int vocab_size = 512;
    std::string id_prefix = "item";

    void validate() const {
        if (n_items < 0) fail(errc::invalid_config, "n_items must be >= 0");
        if (frac_known < 0 || frac_known > 1)
            fail(errc::invalid_config, "frac_known must lie in [0, 1]");
        if (paraphrase_strength < 0 || paraphrase_strength > 1)
            fail(errc::invalid_config, "paraphrase_strength must lie in [0, 1]");
        if (pv_sigma <= 0) fail(errc::invalid_config, "pv_sigma must be positive");
        if (vocab_size < 2) fail(errc::invalid_config, "vocab_size must be >= 2");
        double sum = 0;
        for (double p : question_type_mix) {
            if (p < 0) fail(errc::invalid_config, "question_type_mix entries must be >= 0");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            fail(errc::invalid_config, "question_type_mix must sum to 1");
    }
};

namespace detail {

// A slot is a set of interchangeable words; the rephrase re-picks swapped
// slots within their set. Small shared sets make a question family crowd the
// encoder; generated one-off words keep it distinctive.
struct SlotPool {
    std::vector<std::string> words;
};

inline std::string pseudo_word(Rng& rng, int syllables) {
    static const std::string cons = "bcdghjklmnpqrstvwxyz";
    static const std::string vow = "aeiou";
    std::string w;
    for (int s = 0; s < syllables; ++s) {
        w += cons[rng.next_below(cons.size())];
        w += vow[rng.next_below(vow.size())];
    }
    return w;
}

struct TypeTemplate {
    // frame with placeholders {S} for the subject and {0}..{4} for slots
    const char* frame;
    // per-slot shared pools; empty pool = generate a unique word pair
    std::array<std::vector<std::string>, 5> pools;
};

inline const std::array<TypeTemplate, 8>& type_templates() {
    static const std::array<TypeTemplate, 8> t = {{
        // Who: two unique slots
        {"Who {0} the {1} {2} beside {S} at the {3} {4}?",
         {{{"guided", "escorted", "accompanied", "steered", "shepherded", "ushered"},
           {},
           {},
           {"annual", "seasonal", "quarterly", "yearly", "biennial", "monthly"},
           {"assembly", "gathering", "convocation", "symposium", "congress", "forum"}}}},
        // What: two unique slots
        {"What {0} did {S} {1} near the {2} {3} {4}?",
         {{{"artifact", "relic", "emblem", "token", "heirloom", "talisman"},
           {"recover", "retrieve", "unearth", "salvage", "reclaim", "excavate"},
           {},
           {},
           {"terrace", "esplanade", "promenade", "courtyard", "veranda", "plaza"}}}},
        // When: two unique slots
        {"When did {S} {0} the {1} {2} before the {3} {4}?",
         {{{"finish", "complete", "conclude", "finalize", "wrap", "settle"},
           {},
           {},
           {"winter", "summer", "autumn", "spring", "solstice", "equinox"},
           {"deadline", "cutoff", "closing", "expiry", "terminus", "curfew"}}}},
        // Where: two unique slots
        {"Where did {S} {0} the {1} {2} during the {3} {4}?",
         {{{"store", "stash", "deposit", "shelter", "lodge", "park"},
           {},
           {},
           {"coastal", "inland", "northern", "southern", "eastern", "western"},
           {"expedition", "voyage", "crossing", "trek", "transit", "passage"}}}},
        // Which: every slot from a four-word shared pool
        {"Which {0} did {S} {1} in the {2} {3} {4}?",
         {{{"option", "variant", "candidate", "entry"},
           {"select", "choose", "pick", "favor"},
           {"final", "opening", "decisive", "closing"},
           {"qualifying", "elimination", "championship", "preliminary"},
           {"round", "bracket", "heat", "stage"}}}},
        // Why: four unique slots
        {"Why did {S} {0} the {1} {2} amid the {3} {4}?",
         {{{}, {}, {}, {}, {"controversy", "upheaval", "turmoil", "standoff", "dispute", "uproar"}}}},
        // How: three unique slots
        {"How did {S} {0} the {1} {2} despite the {3} {4}?",
         {{{},
           {},
           {},
           {"broken", "failing", "jammed", "frozen", "cracked", "worn"},
           {"apparatus", "mechanism", "assembly", "rig", "contraption", "gearbox"}}}},
        // Others: no interrogative in the first three tokens
        {"Name the {0} that {S} {1} under the {2} {3} {4}.",
         {{{"specimen", "exhibit", "figure", "artifact", "portrait", "fragment"},
           {},
           {},
           {"eastern", "western", "upper", "lower", "outer", "inner"},
           {"archway", "colonnade", "vault", "gallery", "rotunda", "portico"}}}},
    }};
    return t;
}

inline std::string render_frame(const std::string& frame, const std::string& subject,
                                const std::array<std::string, 5>& words) {
    std::string out;
    for (std::size_t i = 0; i < frame.size(); ++i) {
        if (frame[i] == '{') {
            char c = frame[i + 1];
            i += 2;  // skip "X}"
            if (c == 'S')
                out += subject;
            else
                out += words[c - '0'];
        } else {
            out += frame[i];
        }
    }
    return out;
}

// standard normal CDF
inline double phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

// Deterministic synthetic population. Popularity feeds the subject's
// construction: obscure subjects are padded with words from a small shared
// pool, so their encodings crowd together the way sparse, diffuse
// representations do, while famous subjects stay distinctive.
inline std::vector<KnowledgeItem> generate_synthetic(const GeneratorConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(cfg.seed, "generator"));
    const std::vector<std::string> vocab = make_vocabulary(cfg.vocab_size);
    static const std::vector<std::string> kSubjectPad = {
        "vale", "ridge", "haven", "marsh", "glen", "moor", "fen", "tor"};

    // deterministic pick of which items carry an old answer
    std::vector<int> order(cfg.n_items);
    for (int i = 0; i < cfg.n_items; ++i) order[i] = i;
    for (int i = cfg.n_items - 1; i > 0; --i)
        std::swap(order[i], order[rng.next_below(std::uint64_t(i) + 1)]);
    int n_known = int(std::llround(cfg.frac_known * cfg.n_items));
    std::vector<char> is_known(cfg.n_items, 0);
    for (int i = 0; i < n_known; ++i) is_known[order[i]] = 1;

    std::vector<KnowledgeItem> items;
    items.reserve(cfg.n_items);
    for (int i = 0; i < cfg.n_items; ++i) {
        KnowledgeItem it;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "%s-%04d", cfg.id_prefix.c_str(), i);
        it.id = idbuf;

        // question type by inverse CDF
        double u = rng.next_double();
        int qt = 0;
        double acc = 0;
        for (int t = 0; t < 8; ++t) {
            acc += cfg.question_type_mix[t];
            if (u < acc || t == 7) {
                qt = t;
                break;
            }
        }

        it.page_views = std::max<long long>(
            0, std::llround(std::exp(cfg.pv_mu + cfg.pv_sigma * rng.next_gaussian())));

        // subject: one proper name, padded for obscure entities
        std::string name = detail::pseudo_word(rng, 3);
        name[0] = char(std::toupper(static_cast<unsigned char>(name[0])));
        double z = (std::log(double(std::max<long long>(it.page_views, 1))) - cfg.pv_mu) /
                   cfg.pv_sigma;
        int n_pad = z >= 0.0 ? 0 : (z >= -0.6745 ? 1 : 2);
        it.subject = name;
        std::uint64_t pad0 = rng.next_below(kSubjectPad.size());
        for (int p = 0; p < n_pad; ++p)
            it.subject += " " + kSubjectPad[(pad0 + p) % kSubjectPad.size()];

        // slot words: shared pools keep a synonym for the rephrase, unique
        // slots get a generated twin
        const auto& tmpl = detail::type_templates()[qt];
        std::array<std::string, 5> words, alts;
        for (int s = 0; s < 5; ++s) {
            const auto& pool = tmpl.pools[s];
            if (pool.empty()) {
                words[s] = detail::pseudo_word(rng, 3);
                alts[s] = detail::pseudo_word(rng, 3);
            } else {
                std::uint64_t a = rng.next_below(pool.size());
                std::uint64_t b = (a + 1 + rng.next_below(pool.size() - 1)) % pool.size();
                words[s] = pool[a];
                alts[s] = pool[b];
            }
        }
        it.question = detail::render_frame(tmpl.frame, it.subject, words);

        // rephrase: swap round(rho * 5) slots
        int n_swap = int(std::llround(cfg.paraphrase_strength * 5.0));
        std::array<int, 5> slot_order = {0, 1, 2, 3, 4};
        for (int s = 4; s > 0; --s)
            std::swap(slot_order[s], slot_order[rng.next_below(std::uint64_t(s) + 1)]);
        std::array<std::string, 5> rewords = words;
        for (int s = 0; s < n_swap; ++s) rewords[slot_order[s]] = alts[slot_order[s]];
        it.rephrase = n_swap == 0 ? it.question
                                  : detail::render_frame(tmpl.frame, it.subject, rewords);

        it.answer = vocab[rng.next_below(vocab.size())];
        if (is_known[i]) {
            std::string old = vocab[rng.next_below(vocab.size())];
            while (old == it.answer) old = vocab[rng.next_below(vocab.size())];
            it.old_answer = old;
        }
        items.push_back(std::move(it));
    }
    return items;
}

// ---- installation and the preserved set -------------------------------------

// (K0, V0) snapshots per edit layer. Each installed fact contributes one
// column per distinct prompt (question and rephrase); provenance records the
// item and which prompt produced the column.
struct PreservedSet {
    std::vector<int> layers;                    // edit layers, ascending
    std::vector<Mat> k0;                        // per layer, d_k x n_cols
    std::vector<Mat> v0;                        // per layer, d_h x n_cols (W_l k)
    std::vector<std::string> item_ids;          // per column
    std::vector<std::uint8_t> col_is_rephrase;  // per column

    Eigen::Index cols() const { return k0.empty() ? 0 : k0.front().cols(); }
};

struct InstallOptions {
    // Installed truths are written toward entrench_scale * e(answer): the
    // stand-in for how strongly a pre-existing belief resists overwriting.
    double entrench_scale = 1.5;
    double capacity_fraction = 0.8;   // guard: key columns per layer <= frac * d_k
    double preserved_fraction = 1.0;  // sample of installed items recorded in (K0, V0)
    std::uint64_t sample_seed = 0;
};

struct InstallReport {
    std::vector<std::string> installed;
    std::vector<std::string> excluded;  // failed post-install verification
    int columns_written = 0;
    double min_similarity = 1.0;  // over verified prompts
};

struct InstallResult {
    ModelState state;
    PreservedSet preserved;
    InstallReport report;
};

inline InstallResult install_facts(const ModelState& state,
                                   const std::vector<KnowledgeItem>& items,
                                   const InstallOptions& opts = {}) {
    if (opts.entrench_scale <= 0) fail(errc::invalid_config, "entrench_scale must be positive");
    if (opts.capacity_fraction <= 0 || opts.capacity_fraction > 1)
        fail(errc::invalid_config, "capacity_fraction must lie in (0, 1]");
    if (opts.preserved_fraction < 0 || opts.preserved_fraction > 1)
        fail(errc::invalid_fraction, "preserved_fraction must lie in [0, 1]");

    InstallResult res{state, {}, {}};
    res.preserved.layers = state.config.edit_layers;
    res.preserved.k0.assign(res.preserved.layers.size(),
                            Mat(state.config.key_dim, 0));
    res.preserved.v0.assign(res.preserved.layers.size(),
                            Mat(state.config.hidden_dim, 0));
    if (items.empty()) return res;

    struct Prompt {
        int item;
        const std::string* text;
        bool is_rephrase;
    };
    std::vector<Prompt> prompts;
    for (int i = 0; i < int(items.size()); ++i) {
        const auto& it = items[i];
        if (!state.has_answer(it.pre_edit_truth()))
            fail(errc::vocabulary_miss,
                 "item '" + it.id + "': truth '" + it.pre_edit_truth() + "' not in vocabulary");
        prompts.push_back({i, &it.question, false});
        if (it.rephrase != it.question) prompts.push_back({i, &it.rephrase, true});
    }

    const int last_layer = state.config.edit_layers.back();
    const double capacity = opts.capacity_fraction * state.config.key_dim;
    if (double(prompts.size()) > capacity)
        fail(errc::capacity_exceeded,
             std::to_string(prompts.size()) + " key columns exceed the capacity guard of " +
                 std::to_string(capacity) +
                 " columns; least-squares insertion degrades near rank saturation");

    Mat keys(state.config.key_dim, prompts.size());
    Mat residuals(state.config.hidden_dim, prompts.size());
    for (std::size_t p = 0; p < prompts.size(); ++p) {
        const auto& it = items[prompts[p].item];
        ForwardTrace tr = forward(state, encode_prompt(state, *prompts[p].text, it.subject));
        int target = state.answer_id(it.pre_edit_truth());
        keys.col(p) = tr.k[last_layer];
        residuals.col(p) = opts.entrench_scale *
                               state.answer_embeddings.row(target).transpose() -
                           tr.h.back();
    }
    res.state.memories[last_layer] += least_squares_insert(keys, residuals);
    res.report.columns_written = int(prompts.size());

    // verification or exclusion: the familiarity experiments downstream need
    // the installed set to be genuinely readable from both prompts
    std::vector<char> ok(items.size(), 1);
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& it = items[i];
        int target = state.answer_id(it.pre_edit_truth());
        for (const std::string* text : {&it.question, &it.rephrase}) {
            Prediction pred = decode_prompt(res.state, *text, it.subject);
            if (pred.answer_id != target) {
                ok[i] = 0;
                break;
            }
            res.report.min_similarity = std::min(res.report.min_similarity, pred.similarity);
        }
        (ok[i] ? res.report.installed : res.report.excluded).push_back(it.id);
    }

    std::vector<char> keep(items.size(), 1);
    if (opts.preserved_fraction < 1.0) {
        Rng rng(derive_seed(opts.sample_seed, "preserved-sample"));
        for (std::size_t i = 0; i < items.size(); ++i)
            keep[i] = rng.next_double() < opts.preserved_fraction;
    }

    std::vector<const Prompt*> kept;
    for (const auto& p : prompts)
        if (ok[p.item] && keep[p.item]) kept.push_back(&p);

    for (std::size_t li = 0; li < res.preserved.layers.size(); ++li) {
        res.preserved.k0[li].resize(state.config.key_dim, kept.size());
        res.preserved.v0[li].resize(state.config.hidden_dim, kept.size());
    }
    res.preserved.item_ids.reserve(kept.size());
    for (std::size_t c = 0; c < kept.size(); ++c) {
        const Prompt& p = *kept[c];
        const auto& it = items[p.item];
        ForwardTrace tr = forward(res.state, encode_prompt(res.state, *p.text, it.subject));
        for (std::size_t li = 0; li < res.preserved.layers.size(); ++li) {
            int l = res.preserved.layers[li];
            res.preserved.k0[li].col(c) = tr.k[l];
            res.preserved.v0[li].col(c) = res.state.memories[l] * tr.k[l];
        }
        res.preserved.item_ids.push_back(it.id);
        res.preserved.col_is_rephrase.push_back(p.is_rephrase ? 1 : 0);
    }
    return res;
}

// ---- preserved-set persistence ----------------------------------------------

inline void save_preserved(const PreservedSet& ps, const std::string& path) {
    std::string buf = "SPKV";
    detail::put_raw<std::uint16_t>(buf, detail::kCheckpointVersion);
    nlohmann::ordered_json header = {{"layers", ps.layers},
                                     {"item_ids", ps.item_ids},
                                     {"col_is_rephrase", ps.col_is_rephrase}};
    std::string htext = header.dump();
    detail::put_raw<std::uint32_t>(buf, std::uint32_t(htext.size()));
    buf += htext;
    for (const Mat& m : ps.k0) detail::put_matrix(buf, m);
    for (const Mat& m : ps.v0) detail::put_matrix(buf, m);
    detail::write_file_checksummed(path, std::move(buf));
}

inline PreservedSet load_preserved(const std::string& path) {
    std::string buf = detail::read_file_checksummed(path, "SPKV");
    std::size_t off = 4;
    auto version = detail::get_raw<std::uint16_t>(buf, off);
    if (version != detail::kCheckpointVersion)
        fail(errc::format_version_mismatch, "preserved-set version " + std::to_string(version));
    auto hlen = detail::get_raw<std::uint32_t>(buf, off);
    if (off + hlen > buf.size()) fail(errc::checksum_mismatch, "preserved set truncated");
    PreservedSet ps;
    try {
        nlohmann::json j = nlohmann::json::parse(buf.substr(off, hlen));
        ps.layers = j.at("layers").get<std::vector<int>>();
        ps.item_ids = j.at("item_ids").get<std::vector<std::string>>();
        ps.col_is_rephrase = j.at("col_is_rephrase").get<std::vector<std::uint8_t>>();
    } catch (const nlohmann::json::exception& e) {
        fail(errc::parse_error, std::string("preserved-set header: ") + e.what());
    }
    off += hlen;
    for (std::size_t i = 0; i < ps.layers.size(); ++i)
        ps.k0.push_back(detail::get_matrix(buf, off));
    for (std::size_t i = 0; i < ps.layers.size(); ++i)
        ps.v0.push_back(detail::get_matrix(buf, off));
    if (off != buf.size()) fail(errc::parse_error, "trailing bytes in preserved set");
    return ps;
}

}  // namespace sped
