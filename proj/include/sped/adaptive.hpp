#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sped/evaluation.hpp"

namespace sped {

struct StrategyPolicy {
    int easy_passes = 1;
    int hard_passes = 5;
    EditConfig editor;

    void validate() const {
        if (easy_passes < 1 || hard_passes < easy_passes)
            fail(errc::invalid_config, "need hard_passes >= easy_passes >= 1");
        editor.validate();
    }
};

inline int select_strategy(const KnowledgeProfile& profile, const StrategyPolicy& policy) {
    return profile.difficulty == Difficulty::Hard ? policy.hard_passes : policy.easy_passes;
}

struct CostModel {
    double per_pass_seconds = 29.988;  // calibrated so 10000 passes = 83.3 h
    double cost_per_hour = 0.60024;    // calibrated so 83.3 h = $50.00

    void validate() const {
        if (per_pass_seconds <= 0 || cost_per_hour <= 0)
            fail(errc::invalid_config, "cost model entries must be positive");
    }
};

struct CostReport {
    double baseline_passes = 0;
    double adaptive_passes = 0;
    double baseline_hours = 0;
    double adaptive_hours = 0;
    double baseline_cost = 0;
    double adaptive_cost = 0;
    double gain = 0;  // 1 - adaptive/baseline
};

inline CostReport cost_report(long long n_items, double hard_fraction,
                              const StrategyPolicy& policy, const CostModel& cm) {
    if (hard_fraction < 0 || hard_fraction > 1)
        fail(errc::invalid_fraction,
             "hard_fraction " + std::to_string(hard_fraction) + " outside [0, 1]");
    policy.validate();
    cm.validate();
    CostReport r;
    r.baseline_passes = double(n_items) * policy.hard_passes;
    r.adaptive_passes = double(n_items) * (hard_fraction * policy.hard_passes +
                                           (1.0 - hard_fraction) * policy.easy_passes);
    r.baseline_hours = r.baseline_passes * cm.per_pass_seconds / 3600.0;
    r.adaptive_hours = r.adaptive_passes * cm.per_pass_seconds / 3600.0;
    r.baseline_cost = r.baseline_hours * cm.cost_per_hour;
    r.adaptive_cost = r.adaptive_hours * cm.cost_per_hour;
    r.gain = r.baseline_passes > 0 ? 1.0 - r.adaptive_passes / r.baseline_passes : 0.0;
    return r;
}

inline std::string render_cost_report(const CostReport& r) {
    char buf[256];
    std::string out = "Metric\tBaseline (intensive for all)\tAdaptive\n";
    std::snprintf(buf, sizeof buf, "Total Compute Time\t%.1f hours\t%.1f hours\n",
                  r.baseline_hours, r.adaptive_hours);
    out += buf;
    std::snprintf(buf, sizeof buf, "Total Cost\t$%.2f\t$%.2f\n", r.baseline_cost,
                  r.adaptive_cost);
    out += buf;
    std::snprintf(buf, sizeof buf, "Efficiency Gain\t-\t%.0f%%\n", r.gain * 100.0);
    out += buf;
    return out;
}

// ---- campaign execution -------------------------------------------------------

struct CampaignOptions {
    // Sequential threads the state item by item; batch groups same-strategy
    // items and edits each group at once (intensive group first).
    bool batch_mode = false;
    double tau = 0.9;
    unsigned threads = 1;
    std::optional<PopularityModel> popularity;  // fitted from the items when absent
};

struct ItemOutcome {
    std::string item_id;
    KnowledgeProfile profile;
    int passes_planned = 0;
    int passes_applied = 0;
    Prediction pre_decode;
    Prediction post_decode;  // straight after this item's (or its group's) edit
    int target_answer_id = 0;
    bool success = false;
    std::vector<PassLog> pass_log;
    std::string error;  // empty when the edit applied cleanly
    double elapsed_ms = 0;
};

struct CampaignResult {
    std::vector<ItemOutcome> outcomes;
    ModelState state;
    long long total_passes_applied = 0;

    long long billed_passes() const {
        long long total = 0;
        for (const auto& o : outcomes) total += o.passes_applied;
        return total;
    }
};

inline CampaignResult run_campaign(const ModelState& state,
                                   const std::vector<KnowledgeItem>& items,
                                   const PreservedSet& preserved,
                                   const StrategyPolicy& policy,
                                   const CampaignOptions& opts = {}) {
    policy.validate();
    CampaignResult res{{}, state, 0};
    if (items.empty()) return res;

    PopularityModel pop = opts.popularity ? *opts.popularity : fit_popularity(items);
    std::vector<KnowledgeProfile> profiles(items.size());
    parallel_for(items.size(), opts.threads, [&](std::size_t i) {
        profiles[i] = diagnose_item(state, pop, items[i], opts.tau);
    });

    std::vector<EditRequest> requests = make_requests(state, items);
    res.outcomes.resize(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        ItemOutcome& o = res.outcomes[i];
        o.item_id = items[i].id;
        o.profile = profiles[i];
        o.passes_planned = select_strategy(profiles[i], policy);
        o.target_answer_id = requests[i].target_answer_id;
        o.pre_decode = decode_prompt(state, items[i].question, items[i].subject);
    }

    using clock = std::chrono::steady_clock;
    auto finish = [&](std::size_t i) {
        ItemOutcome& o = res.outcomes[i];
        o.post_decode = decode_prompt(res.state, items[i].question, items[i].subject);
        o.success = o.error.empty() && o.post_decode.answer_id == o.target_answer_id;
    };

    if (!opts.batch_mode) {
        for (std::size_t i = 0; i < items.size(); ++i) {
            ItemOutcome& o = res.outcomes[i];
            EditConfig cfg = policy.editor;
            cfg.passes = o.passes_planned;
            auto t0 = clock::now();
            try {
                auto [next, log] = repeat_edit(res.state, {requests[i]}, preserved, cfg);
                res.state = std::move(next);
                o.pass_log = std::move(log);
                o.passes_applied = cfg.passes;
            } catch (const error& e) {
                o.error = e.what();  // the item fails; the campaign continues
            }
            o.elapsed_ms =
                std::chrono::duration<double, std::milli>(clock::now() - t0).count();
            finish(i);
        }
    } else {
        std::vector<std::size_t> hard, easy;
        for (std::size_t i = 0; i < items.size(); ++i)
            (res.outcomes[i].passes_planned >= policy.hard_passes ? hard : easy).push_back(i);
        for (const auto* group : {&hard, &easy}) {
            if (group->empty()) continue;
            std::vector<EditRequest> batch;
            for (std::size_t i : *group) batch.push_back(requests[i]);
            int passes = res.outcomes[group->front()].passes_planned;
            EditConfig cfg = policy.editor;
            cfg.passes = passes;
            auto t0 = clock::now();
            std::string err;
            std::vector<PassLog> log;
            try {
                auto [next, l] = repeat_edit(res.state, batch, preserved, cfg);
                res.state = std::move(next);
                log = std::move(l);
            } catch (const error& e) {
                err = e.what();
            }
            double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count() /
                        double(group->size());
            for (std::size_t i : *group) {
                ItemOutcome& o = res.outcomes[i];
                o.error = err;
                if (err.empty()) {
                    o.passes_applied = passes;
                    o.pass_log = log;
                }
                o.elapsed_ms = ms;
                finish(i);
            }
        }
    }
    res.total_passes_applied = res.billed_passes();
    return res;
}

// Line-delimited audit records; elapsed_ms is the only field that varies
// between reruns of one manifest.
inline std::string render_audit_log(const CampaignResult& res) {
    std::string out;
    for (const auto& o : res.outcomes) {
        nlohmann::ordered_json j;
        j["item_id"] = o.item_id;
        j["difficulty"] = difficulty_name(o.profile.difficulty);
        std::vector<std::string> reasons;
        for (auto r : o.profile.reasons) reasons.push_back(hard_reason_name(r));
        j["reasons"] = reasons;
        j["passes_planned"] = o.passes_planned;
        j["passes_applied"] = o.passes_applied;
        j["pre_decode"] = {{"answer_id", o.pre_decode.answer_id},
                           {"similarity", o.pre_decode.similarity}};
        j["post_decode"] = {{"answer_id", o.post_decode.answer_id},
                            {"similarity", o.post_decode.similarity}};
        j["target_answer_id"] = o.target_answer_id;
        j["success"] = o.success;
        std::vector<double> residuals;
        for (const auto& p : o.pass_log) residuals.push_back(p.residual_post);
        j["pass_residuals"] = residuals;
        if (!o.error.empty()) j["error"] = o.error;
        j["elapsed_ms"] = o.elapsed_ms;
        out += j.dump() + '\n';
    }
    return out;
}

}  // namespace sped
