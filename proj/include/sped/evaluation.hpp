#pragma once

#include <map>
#include <string>
#include <vector>

#include "sped/editors.hpp"
#include "sped/spectrum.hpp"

namespace sped {

// Exact rational rate; rendering rounds half-to-even at two decimals. A zero
// denominator is the "undefined" marker and renders as an em dash, never 0.
struct Rate {
    long long num = 0;
    long long den = 0;

    bool defined() const { return den != 0; }
    double value() const { return defined() ? double(num) / double(den) : 0.0; }
};

inline std::string render_rate(const Rate& r) {
    if (!r.defined()) return "—";
    long long scaled = r.num * 100;
    long long q = scaled / r.den;
    long long rem = scaled % r.den;
    if (2 * rem > r.den)
        ++q;
    else if (2 * rem == r.den && (q % 2) != 0)
        ++q;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%lld.%02lld", q / 100, q % 100);
    return buf;
}

inline Rate eval_reliability(const ModelState& state, const std::vector<EditRequest>& edited) {
    Rate r{0, (long long)edited.size()};
    for (const auto& req : edited)
        r.num += decode_prompt(state, req.item.question, req.item.subject).answer_id ==
                 req.target_answer_id;
    return r;
}

inline Rate eval_generalization(const ModelState& state,
                                const std::vector<EditRequest>& edited) {
    Rate r{0, (long long)edited.size()};
    for (const auto& req : edited)
        r.num += decode_prompt(state, req.item.rephrase, req.item.subject).answer_id ==
                 req.target_answer_id;
    return r;
}

// Fraction of sampled preserved items whose decoded answer did not move.
inline Rate eval_locality(const ModelState& pre, const ModelState& post,
                          const std::vector<KnowledgeItem>& sample) {
    if (!(pre.config == post.config))
        fail(errc::config_mismatch, "locality: states have different configurations");
    Rate r{0, (long long)sample.size()};
    for (const auto& it : sample)
        r.num += decode_prompt(post, it.question, it.subject).answer_id ==
                 decode_prompt(pre, it.question, it.subject).answer_id;
    return r;
}

// ---- general-ability proxy ---------------------------------------------------
//
// Composite probes mix the encodings of two preserved items; their keys fall
// off the preserved span, so stability here measures collateral damage beyond
// exact locality.

struct Probe {
    Vec h0;
    double alpha;
};

struct ProbeBattery {
    std::vector<Probe> probes;
};

struct BatteryOptions {
    int size = 200;
    std::array<double, 3> alphas = {0.3, 0.5, 0.7};
    // discard probes whose pre-state decode margin is below this floor; a
    // probe sitting on a decision boundary measures tie-breaking, not damage
    double margin_floor = 0.05;
    std::uint64_t seed = 0;
};

inline ProbeBattery make_battery(const ModelState& state,
                                 const std::vector<KnowledgeItem>& parents,
                                 const BatteryOptions& opts = {}) {
    if (parents.size() < 2)
        fail(errc::insufficient_preserved, "probe battery needs at least 2 preserved items, got " +
                                               std::to_string(parents.size()));
    std::vector<Vec> h0(parents.size());
    for (std::size_t i = 0; i < parents.size(); ++i)
        h0[i] = encode_prompt(state, parents[i].question, parents[i].subject);

    Rng rng(derive_seed(opts.seed, "probe-battery"));
    ProbeBattery battery;
    int attempts = 0;
    const int max_attempts = opts.size * 100;
    while (int(battery.probes.size()) < opts.size && attempts++ < max_attempts) {
        std::size_t a = rng.next_below(parents.size());
        std::size_t b = rng.next_below(parents.size() - 1);
        if (b >= a) ++b;
        double alpha = opts.alphas[battery.probes.size() % opts.alphas.size()];
        Vec h = alpha * h0[a] + (1.0 - alpha) * h0[b];
        double n = h.norm();
        if (n == 0) continue;
        h /= n;
        if (opts.margin_floor > 0) {
            Prediction pred = decode(state, forward(state, h).h.back());
            if (pred.runner_up_margin < opts.margin_floor) continue;
        }
        battery.probes.push_back({std::move(h), alpha});
    }
    return battery;
}

inline Rate eval_general_ability(const ModelState& pre, const ModelState& post,
                                 const ProbeBattery& battery) {
    if (!(pre.config == post.config))
        fail(errc::config_mismatch, "general ability: states have different configurations");
    Rate r{0, (long long)battery.probes.size()};
    for (const auto& p : battery.probes)
        r.num += decode(post, forward(post, p.h0).h.back()).answer_id ==
                 decode(pre, forward(pre, p.h0).h.back()).answer_id;
    return r;
}

// ---- grouped reporting --------------------------------------------------------

struct ItemResult {
    std::string item_id;
    KnowledgeProfile profile;
    std::string condition;  // e.g. "1x", "5x"
    bool reliability = false;
    bool generalization = false;
};

struct GroupCell {
    long long rel = 0;
    long long gen = 0;
    long long total = 0;
};

struct GroupedResults {
    std::vector<std::string> conditions;
    struct Dim {
        std::string name;
        std::vector<std::string> groups;
        std::vector<std::vector<GroupCell>> cells;  // [group][condition]
    };
    std::vector<Dim> dims;

    const GroupCell* cell(const std::string& dim, const std::string& group,
                          const std::string& condition) const {
        for (const auto& d : dims) {
            if (d.name != dim) continue;
            for (std::size_t g = 0; g < d.groups.size(); ++g) {
                if (d.groups[g] != group) continue;
                for (std::size_t c = 0; c < conditions.size(); ++c)
                    if (conditions[c] == condition) return &d.cells[g][c];
            }
        }
        return nullptr;
    }

    Rate success_rate(const std::string& dim, const std::string& group,
                      const std::string& condition) const {
        const GroupCell* c = cell(dim, group, condition);
        return c ? Rate{c->rel, c->total} : Rate{0, 0};
    }
};

inline GroupedResults group_results(const std::vector<ItemResult>& results) {
    GroupedResults gr;
    for (const auto& r : results) {
        bool seen = false;
        for (const auto& c : gr.conditions) seen |= (c == r.condition);
        if (!seen) gr.conditions.push_back(r.condition);
    }
    auto dim = [&](std::string name, std::vector<std::string> groups) {
        GroupedResults::Dim d;
        d.name = std::move(name);
        d.groups = std::move(groups);
        d.cells.assign(d.groups.size(),
                       std::vector<GroupCell>(gr.conditions.size()));
        return d;
    };
    gr.dims.push_back(dim("familiarity", {"Known", "Unknown"}));
    gr.dims.push_back(dim("popularity", {"Famous", "Unfamous"}));
    {
        std::vector<std::string> qt(kQuestionTypeNames.begin(), kQuestionTypeNames.end());
        gr.dims.push_back(dim("question_type", std::move(qt)));
    }
    gr.dims.push_back(dim("difficulty", {"Hard", "Easy"}));

    for (const auto& r : results) {
        std::size_t cond = 0;
        while (gr.conditions[cond] != r.condition) ++cond;
        auto add = [&](std::size_t d, std::size_t g) {
            GroupCell& c = gr.dims[d].cells[g][cond];
            c.rel += r.reliability;
            c.gen += r.generalization;
            c.total += 1;
        };
        add(0, r.profile.familiarity == Familiarity::Known ? 0 : 1);
        add(1, r.profile.popularity == Popularity::Famous ? 0 : 1);
        add(2, std::size_t(r.profile.question_type));
        add(3, r.profile.difficulty == Difficulty::Hard ? 0 : 1);
    }
    return gr;
}

// Aligned plain-text success table, one block per spectrum dimension.
inline std::string render_grouped_table(const GroupedResults& gr, bool generalization = false) {
    std::string out;
    std::size_t label_w = 14;
    for (const auto& d : gr.dims)
        for (const auto& g : d.groups) label_w = std::max(label_w, g.size() + 2);
    auto pad = [&](std::string s, std::size_t w) {
        while (s.size() < w) s += ' ';
        return s;
    };
    out += pad(generalization ? "generalization" : "success", label_w);
    for (const auto& c : gr.conditions) out += pad(c, 8);
    out += '\n';
    for (const auto& d : gr.dims) {
        out += "[" + d.name + "]\n";
        for (std::size_t g = 0; g < d.groups.size(); ++g) {
            out += pad("  " + d.groups[g], label_w);
            for (std::size_t c = 0; c < gr.conditions.size(); ++c) {
                const GroupCell& cell = d.cells[g][c];
                Rate r{generalization ? cell.gen : cell.rel, cell.total};
                out += pad(render_rate(r), 8);
            }
            out += '\n';
        }
    }
    return out;
}

// Plot-ready long format: dimension, group, metric, condition, value.
inline std::string render_long_tsv(const GroupedResults& gr) {
    std::string out = "dimension\tgroup\tmetric\tcondition\tnum\tden\tvalue\n";
    for (const auto& d : gr.dims) {
        for (std::size_t g = 0; g < d.groups.size(); ++g) {
            for (std::size_t c = 0; c < gr.conditions.size(); ++c) {
                const GroupCell& cell = d.cells[g][c];
                for (int metric = 0; metric < 2; ++metric) {
                    Rate r{metric == 0 ? cell.rel : cell.gen, cell.total};
                    out += d.name + '\t' + d.groups[g] + '\t' +
                           (metric == 0 ? "success" : "generalization") + '\t' +
                           gr.conditions[c] + '\t' + std::to_string(r.num) + '\t' +
                           std::to_string(r.den) + '\t' + render_rate(r) + '\n';
                }
            }
        }
    }
    return out;
}

struct EvalReport {
    Rate reliability;
    Rate generalization;
    Rate locality;
    Rate general_ability;
    GroupedResults groups;

    // success is reliability on the exact edit prompt; generalization is
    // always reported alongside so a stricter composite stays recoverable
    Rate success() const { return reliability; }
};

inline std::string render_eval_summary(const EvalReport& rep) {
    std::string out = "metric\tnum\tden\tvalue\n";
    auto row = [&](const char* name, const Rate& r) {
        out += std::string(name) + '\t' + std::to_string(r.num) + '\t' +
               std::to_string(r.den) + '\t' + render_rate(r) + '\n';
    };
    row("success", rep.success());
    row("reliability", rep.reliability);
    row("generalization", rep.generalization);
    row("locality", rep.locality);
    row("general_ability", rep.general_ability);
    return out;
}

}  // namespace sped
