#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sped/adaptive.hpp"

namespace sped {

// One prepared experiment population: model with anchors and all old answers
// installed, diagnoses against the installed state, and the probe battery.
struct Population {
    ModelState base;
    std::vector<KnowledgeItem> items;
    std::vector<KnowledgeItem> anchors;
    PreservedSet preserved;
    InstallReport install_report;
    std::vector<KnowledgeProfile> profiles;
    PopularityModel popularity;
    ProbeBattery battery;
    std::vector<EditRequest> requests;
};

struct ReproSetup {
    ModelConfig model;
    GeneratorConfig gen;
    int n_anchors = 24;
    InstallOptions install;
    EditConfig editor;
    StrategyPolicy policy;
    BatteryOptions battery;
    double tau = 0.9;
    unsigned threads = 1;
};

// Defaults sized so that a full-population batch edit genuinely contends for
// key space: the preserved columns leave fewer free dimensions than the batch
// has items, which is where the spectrum's difficulty structure shows up.
inline ReproSetup make_repro_setup(std::uint64_t seed) {
    ReproSetup s;
    s.model.hidden_dim = 64;
    s.model.key_dim = 576;
    s.model.num_layers = 4;
    s.model.edit_layers = {1, 2};
    s.model.vocab_size = 512;
    s.model.seed = derive_seed(seed, "model");

    s.gen.n_items = 400;
    s.gen.frac_known = 0.5;
    s.gen.paraphrase_strength = 0.2;
    s.gen.vocab_size = s.model.vocab_size;
    s.gen.seed = derive_seed(seed, "generator");

    s.n_anchors = 24;
    s.install.entrench_scale = 1.5;
    s.install.sample_seed = derive_seed(seed, "install");

    s.policy.easy_passes = 1;
    s.policy.hard_passes = 5;
    s.policy.editor.method = EditMethod::ALPHAEDIT;
    // per-item fine-tuning at this scale sits near the stability edge at the
    // generic defaults; the experiment protocol pins a safe pair
    s.editor.ft_learning_rate = 0.04;
    s.editor.ft_steps = 40;
    s.policy.editor.ft_learning_rate = 0.04;
    s.policy.editor.ft_steps = 40;

    s.battery.size = 200;
    s.battery.margin_floor = 0.05;
    s.battery.seed = derive_seed(seed, "battery");
    return s;
}

inline Population build_population(const ReproSetup& setup) {
    Population pop;
    ModelState fresh = init_model(setup.model);
    pop.items = generate_synthetic(setup.gen);

    GeneratorConfig anchor_cfg = setup.gen;
    anchor_cfg.n_items = setup.n_anchors;
    anchor_cfg.frac_known = 0.0;
    anchor_cfg.seed = derive_seed(setup.gen.seed, "anchors");
    anchor_cfg.id_prefix = "anchor";
    pop.anchors = generate_synthetic(anchor_cfg);

    std::vector<KnowledgeItem> to_install = pop.anchors;
    for (const auto& it : pop.items)
        if (it.old_answer) to_install.push_back(it);
    InstallResult inst = install_facts(fresh, to_install, setup.install);
    pop.base = std::move(inst.state);
    pop.preserved = std::move(inst.preserved);
    pop.install_report = std::move(inst.report);

    pop.popularity = fit_popularity(pop.items);
    pop.profiles.resize(pop.items.size());
    parallel_for(pop.items.size(), setup.threads, [&](std::size_t i) {
        pop.profiles[i] = diagnose_item(pop.base, pop.popularity, pop.items[i], setup.tau);
    });
    pop.battery = make_battery(pop.base, pop.anchors, setup.battery);
    pop.requests = make_requests(pop.base, pop.items);
    return pop;
}

// Fixed-intensity campaign, optionally over a subset. The mass editors run
// in batch mode; fine-tuning is the traditional per-edit baseline and is
// applied item by item.
inline CampaignResult run_fixed_campaign(const Population& pop, const ReproSetup& setup,
                                         EditMethod method, int passes,
                                         const std::vector<char>* keep = nullptr) {
    std::vector<KnowledgeItem> items;
    if (keep) {
        for (std::size_t i = 0; i < pop.items.size(); ++i)
            if ((*keep)[i]) items.push_back(pop.items[i]);
    } else {
        items = pop.items;
    }
    StrategyPolicy policy = setup.policy;
    policy.editor.method = method;
    policy.easy_passes = passes;
    policy.hard_passes = passes;
    CampaignOptions opts;
    opts.batch_mode = method != EditMethod::FT;
    opts.tau = setup.tau;
    opts.threads = setup.threads;
    opts.popularity = pop.popularity;
    return run_campaign(pop.base, items, pop.preserved, policy, opts);
}

// Per-item results measured on the campaign's final state.
inline std::vector<ItemResult> results_on_state(const Population& pop, const ModelState& state,
                                                const std::string& condition) {
    std::vector<ItemResult> out(pop.items.size());
    for (std::size_t i = 0; i < pop.items.size(); ++i) {
        const auto& it = pop.items[i];
        int target = pop.requests[i].target_answer_id;
        out[i].item_id = it.id;
        out[i].profile = pop.profiles[i];
        out[i].condition = condition;
        out[i].reliability =
            decode_prompt(state, it.question, it.subject).answer_id == target;
        out[i].generalization =
            decode_prompt(state, it.rephrase, it.subject).answer_id == target;
    }
    return out;
}

inline EvalReport evaluate_campaign(const Population& pop, const ModelState& final_state,
                                    const std::string& condition) {
    EvalReport rep;
    rep.reliability = eval_reliability(final_state, pop.requests);
    rep.generalization = eval_generalization(final_state, pop.requests);
    rep.locality = eval_locality(pop.base, final_state, pop.anchors);
    rep.general_ability = eval_general_ability(pop.base, final_state, pop.battery);
    rep.groups = group_results(results_on_state(pop, final_state, condition));
    return rep;
}

// Edits only the items whose profile passes `keep` and measures collateral
// on the shared battery. Mirrors per-column table experiments.
inline Rate subcampaign_general_ability(const Population& pop, const ReproSetup& setup,
                                        EditMethod method,
                                        const std::function<bool(const KnowledgeProfile&)>& keep,
                                        int passes = 1) {
    std::vector<char> mask(pop.items.size(), 0);
    bool any = false;
    for (std::size_t i = 0; i < pop.items.size(); ++i) {
        mask[i] = keep(pop.profiles[i]);
        any |= bool(mask[i]);
    }
    if (!any) return Rate{0, 0};
    CampaignResult camp = run_fixed_campaign(pop, setup, method, passes, &mask);
    return eval_general_ability(pop.base, camp.state, pop.battery);
}

struct ReproOutput {
    std::vector<std::pair<std::string, std::string>> files;  // name -> content
    std::vector<std::string> verdicts;
    bool all_hold = true;

    void verdict(const std::string& claim, bool held) {
        verdicts.push_back((held ? "hold  " : "FAIL  ") + claim);
        all_hold &= held;
    }
};

namespace detail {

inline std::string condition_name(int passes) { return std::to_string(passes) + "x"; }

inline void emit_method_tables(ReproOutput& out, const std::string& stem,
                               const GroupedResults& gr) {
    out.files.emplace_back(stem + "_grouped.txt", render_grouped_table(gr));
    out.files.emplace_back(stem + "_long.tsv", render_long_tsv(gr));
}

}  // namespace detail

// Known-vs-Unknown finding: insertion into a representational void is easier
// than overwriting an installed belief, and unconstrained fine-tuning damages
// more when it overwrites.
inline ReproOutput experiment_familiarity(const Population& pop, const ReproSetup& setup) {
    ReproOutput out;
    for (EditMethod m : {EditMethod::MEMIT, EditMethod::ALPHAEDIT}) {
        CampaignResult camp = run_fixed_campaign(pop, setup, m, 1);
        GroupedResults gr = group_results(results_on_state(pop, camp.state, "1x"));
        detail::emit_method_tables(out, std::string("familiarity_") + edit_method_name(m), gr);
        Rate known = gr.success_rate("familiarity", "Known", "1x");
        Rate unknown = gr.success_rate("familiarity", "Unknown", "1x");
        out.verdict(std::string(edit_method_name(m)) +
                        ": Unknown 1x success >= Known (" + render_rate(unknown) + " vs " +
                        render_rate(known) + ")",
                    unknown.value() >= known.value());
    }
    Rate ga_known = subcampaign_general_ability(
        pop, setup, EditMethod::FT,
        [](const KnowledgeProfile& p) { return p.familiarity == Familiarity::Known; });
    Rate ga_unknown = subcampaign_general_ability(
        pop, setup, EditMethod::FT,
        [](const KnowledgeProfile& p) { return p.familiarity == Familiarity::Unknown; });
    out.verdict("ft: general ability after editing Known <= after editing Unknown (" +
                    render_rate(ga_known) + " vs " + render_rate(ga_unknown) + ")",
                ga_known.value() <= ga_unknown.value());
    std::string tsv = "group\tmetric\tvalue\n";
    tsv += "Known\tft_general_ability\t" + render_rate(ga_known) + '\n';
    tsv += "Unknown\tft_general_ability\t" + render_rate(ga_unknown) + '\n';
    out.files.emplace_back("familiarity_ft_general_ability.tsv", tsv);
    return out;
}

inline ReproOutput experiment_popularity(const Population& pop, const ReproSetup& setup) {
    ReproOutput out;
    for (EditMethod m : {EditMethod::MEMIT, EditMethod::ALPHAEDIT}) {
        CampaignResult camp = run_fixed_campaign(pop, setup, m, 1);
        GroupedResults gr = group_results(results_on_state(pop, camp.state, "1x"));
        detail::emit_method_tables(out, std::string("popularity_") + edit_method_name(m), gr);
        Rate famous = gr.success_rate("popularity", "Famous", "1x");
        Rate unfamous = gr.success_rate("popularity", "Unfamous", "1x");
        out.verdict(std::string(edit_method_name(m)) + ": Famous 1x success >= Unfamous (" +
                        render_rate(famous) + " vs " + render_rate(unfamous) + ")",
                    famous.value() >= unfamous.value());
    }
    return out;
}

inline ReproOutput experiment_qtype(const Population& pop, const ReproSetup& setup) {
    ReproOutput out;
    CampaignResult camp = run_fixed_campaign(pop, setup, EditMethod::ALPHAEDIT, 1);
    GroupedResults gr = group_results(results_on_state(pop, camp.state, "1x"));
    detail::emit_method_tables(out, "qtype_alphaedit", gr);
    Rate why = gr.success_rate("question_type", "Why", "1x");
    Rate which = gr.success_rate("question_type", "Which", "1x");
    out.verdict("alphaedit: Why 1x success >= Which (" + render_rate(why) + " vs " +
                    render_rate(which) + ")",
                why.value() >= which.value());
    return out;
}

// 1x-vs-5x comparison per Hard group plus the adaptive strategy's own run.
inline ReproOutput experiment_adaptive(const Population& pop, const ReproSetup& setup) {
    ReproOutput out;
    CampaignResult one = run_fixed_campaign(pop, setup, EditMethod::ALPHAEDIT, 1);
    CampaignResult five =
        run_fixed_campaign(pop, setup, EditMethod::ALPHAEDIT, setup.policy.hard_passes);
    std::vector<ItemResult> rows = results_on_state(pop, one.state, "1x");
    std::vector<ItemResult> rows5 =
        results_on_state(pop, five.state, detail::condition_name(setup.policy.hard_passes));
    rows.insert(rows.end(), rows5.begin(), rows5.end());
    GroupedResults gr = group_results(rows);
    detail::emit_method_tables(out, "adaptive_1x_vs_5x", gr);

    const std::string cond5 = detail::condition_name(setup.policy.hard_passes);
    const std::pair<const char*, const char*> hard_groups[] = {
        {"familiarity", "Known"}, {"popularity", "Unfamous"}, {"question_type", "Which"}};
    for (auto [dim, group] : hard_groups) {
        Rate r1 = gr.success_rate(dim, group, "1x");
        Rate r5 = gr.success_rate(dim, group, cond5);
        out.verdict(std::string(group) + ": " + cond5 + " success >= 1x (" + render_rate(r5) +
                        " vs " + render_rate(r1) + ")",
                    r5.value() >= r1.value());
    }
    Rate e1 = gr.success_rate("difficulty", "Easy", "1x");
    Rate e5 = gr.success_rate("difficulty", "Easy", cond5);
    out.verdict("Easy group plateaus (" + render_rate(e5) + " vs " + render_rate(e1) + ")",
                std::abs(e5.value() - e1.value()) <= 0.02 + 1e-12);

    CampaignOptions copts;
    copts.batch_mode = true;
    copts.tau = setup.tau;
    copts.threads = setup.threads;
    copts.popularity = pop.popularity;
    StrategyPolicy policy = setup.policy;
    policy.editor.method = EditMethod::ALPHAEDIT;
    CampaignResult adaptive = run_campaign(pop.base, pop.items, pop.preserved, policy, copts);
    EvalReport rep = evaluate_campaign(pop, adaptive.state, "adaptive");
    out.files.emplace_back("adaptive_eval.tsv", render_eval_summary(rep));
    out.files.emplace_back("adaptive_audit.jsonl", render_audit_log(adaptive));
    long long hard_n = 0;
    for (const auto& p : pop.profiles) hard_n += p.difficulty == Difficulty::Hard;
    out.files.emplace_back(
        "adaptive_routing.tsv",
        "hard_items\t" + std::to_string(hard_n) + "\ntotal_items\t" +
            std::to_string(pop.items.size()) + "\nbilled_passes\t" +
            std::to_string(adaptive.billed_passes()) + "\n");
    return out;
}

inline ReproOutput experiment_cost(const StrategyPolicy& policy, const CostModel& cm,
                                   long long n_items = 2000, double hard_fraction = 0.6) {
    ReproOutput out;
    CostReport r = cost_report(n_items, hard_fraction, policy, cm);
    out.files.emplace_back("cost_report.tsv", render_cost_report(r));
    char line[160];
    std::snprintf(line, sizeof line,
                  "adaptive %.4f hours, $%.4f, gain %.2f%% (baseline %.4f hours, $%.4f)",
                  r.adaptive_hours, r.adaptive_cost, r.gain * 100.0, r.baseline_hours,
                  r.baseline_cost);
    out.verdicts.push_back(line);
    return out;
}

}  // namespace sped
