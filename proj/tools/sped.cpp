// sped - a desk-scale laboratory for knowledge-aware model editing.
//
// Subcommands compose a full pipeline: gen-data -> install -> diagnose ->
// edit -> eval, plus cost accounting and scripted repro experiments. Every
// command writes a manifest so any artifact can be regenerated from its
// configuration and seed.

#include <CLI11.hpp>

#include <iostream>

#include "sped/config.hpp"

namespace {

using namespace sped;

struct CliArgs {
    RunConfig cfg;
    bool force = false;
    std::string method = "alphaedit";
    std::string strategy = "adaptive";
    bool batch = false;
    std::string pre_path;
    std::string post_path;
    double hard_fraction = 0.6;
    long long cost_items = 2000;
    std::string experiment = "familiarity";
};

EditMethod parse_method(const std::string& name) {
    if (name == "ft") return EditMethod::FT;
    if (name == "memit") return EditMethod::MEMIT;
    if (name == "alphaedit") return EditMethod::ALPHAEDIT;
    fail(errc::usage, "unknown method '" + name + "'");
}

Manifest start_manifest(const CliArgs& args, const std::string& command) {
    return Manifest{command, args.cfg.config_hash(), args.cfg.seed};
}

std::vector<KnowledgeItem> load_nonempty_dataset(const std::string& path) {
    auto items = load_dataset(path);
    if (items.empty()) fail(errc::too_few_items, "dataset has 0 items ('" + path + "')");
    return items;
}

// Flattens an INI-style [section] file into --section.key=value arguments.
// Injected ahead of the command line, so explicit flags take precedence.
std::vector<std::string> config_file_args(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(errc::io_failure, "cannot open config file '" + path + "'");
    std::vector<std::string> out;
    std::string line, section;
    while (std::getline(in, line)) {
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        if (line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = line.substr(1, line.size() - 2);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(errc::usage, "config file '" + path + "': expected key=value, got '" + line + "'");
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t");
            auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        out.push_back("--" + (section.empty() ? key : section + "." + key) + "=" + value);
    }
    return out;
}

int cmd_gen_data(CliArgs& args) {
    RunConfig& cfg = args.cfg;
    ensure_fresh(cfg.dataset, args.force);
    ensure_fresh(cfg.anchors, args.force);

    save_dataset(generate_synthetic(cfg.generator), cfg.dataset);
    GeneratorConfig anchor_cfg = cfg.generator;
    anchor_cfg.n_items = cfg.n_anchors;
    anchor_cfg.frac_known = 0.0;
    anchor_cfg.seed = derive_seed(cfg.generator.seed, "anchors");
    anchor_cfg.id_prefix = "anchor";
    save_dataset(generate_synthetic(anchor_cfg), cfg.anchors);

    Manifest m = start_manifest(args, "gen-data");
    m.add(cfg.dataset);
    m.add(cfg.anchors);
    m.write(cfg.dataset + ".manifest.json");
    std::cout << "wrote " << cfg.dataset << " (" << cfg.generator.n_items << " items), "
              << cfg.anchors << " (" << cfg.n_anchors << " anchors)\n";
    return 0;
}

int cmd_install(CliArgs& args) {
    RunConfig& cfg = args.cfg;
    auto items = load_nonempty_dataset(cfg.dataset);
    auto anchors = load_dataset(cfg.anchors);
    ensure_fresh(cfg.checkpoint, args.force);
    ensure_fresh(cfg.preserved, args.force);
    std::string report_path = cfg.reports_dir + "/install_report.json";
    ensure_fresh(report_path, args.force);

    std::vector<KnowledgeItem> to_install = anchors;
    for (const auto& it : items)
        if (it.old_answer) to_install.push_back(it);

    ModelState fresh = init_model(cfg.model);
    InstallResult res = install_facts(fresh, to_install, cfg.install);
    save_checkpoint(res.state, cfg.checkpoint);
    save_preserved(res.preserved, cfg.preserved);
    nlohmann::ordered_json rep = {{"installed", res.report.installed},
                                  {"excluded", res.report.excluded},
                                  {"columns_written", res.report.columns_written},
                                  {"min_similarity", res.report.min_similarity}};
    write_text(report_path, rep.dump(2) + "\n");

    Manifest m = start_manifest(args, "install");
    m.add(cfg.checkpoint);
    m.add(cfg.preserved);
    m.add(report_path);
    m.write(cfg.checkpoint + ".manifest.json");
    std::cout << "installed " << res.report.installed.size() << " facts ("
              << res.report.excluded.size() << " excluded) into " << cfg.checkpoint << "\n";
    return 0;
}

int cmd_diagnose(CliArgs& args) {
    RunConfig& cfg = args.cfg;
    auto items = load_nonempty_dataset(cfg.dataset);
    ModelState state = load_checkpoint(cfg.checkpoint);
    std::string path = cfg.reports_dir + "/diagnosis.tsv";
    ensure_fresh(path, args.force);

    auto profiles = diagnose_all(state, items, cfg.tau, cfg.threads);
    write_text(path, render_diagnosis_report(profiles));

    long long hard = 0;
    for (const auto& p : profiles) hard += p.difficulty == Difficulty::Hard;
    Manifest m = start_manifest(args, "diagnose");
    m.add(path);
    m.write(path + ".manifest.json");
    std::cout << "diagnosed " << items.size() << " items: " << hard << " hard, "
              << ((long long)items.size() - hard) << " easy -> " << path << "\n";
    return 0;
}

int cmd_edit(CliArgs& args) {
    RunConfig& cfg = args.cfg;
    StrategyPolicy policy = cfg.policy;
    policy.editor = cfg.editor;
    policy.editor.method = parse_method(args.method);
    if (args.strategy == "fixed1") {
        policy.easy_passes = policy.hard_passes = 1;
    } else if (args.strategy == "fixed5") {
        policy.easy_passes = policy.hard_passes = 5;
    } else if (args.strategy != "adaptive") {
        fail(errc::usage, "unknown strategy '" + args.strategy + "'");
    }

    auto items = load_nonempty_dataset(cfg.dataset);
    ModelState state = load_checkpoint(cfg.checkpoint);
    PreservedSet preserved = load_preserved(cfg.preserved);
    ensure_fresh(cfg.edited_checkpoint, args.force);
    std::string audit_path = cfg.reports_dir + "/audit.jsonl";
    ensure_fresh(audit_path, args.force);

    CampaignOptions opts;
    opts.batch_mode = args.batch;
    opts.tau = cfg.tau;
    opts.threads = cfg.threads;
    CampaignResult res = run_campaign(state, items, preserved, policy, opts);
    save_checkpoint(res.state, cfg.edited_checkpoint);
    write_text(audit_path, render_audit_log(res));

    long long ok = 0;
    for (const auto& o : res.outcomes) ok += o.success;
    Manifest m = start_manifest(args, "edit");
    m.add(cfg.edited_checkpoint);
    m.add(audit_path, /*deterministic=*/false);  // carries wall-clock fields
    m.write(cfg.edited_checkpoint + ".manifest.json");
    std::cout << "edited " << items.size() << " items (" << ok << " immediate successes, "
              << res.billed_passes() << " passes) -> " << cfg.edited_checkpoint << "\n";
    return 0;
}

int cmd_eval(CliArgs& args) {
    RunConfig& cfg = args.cfg;
    auto items = load_nonempty_dataset(cfg.dataset);
    auto anchors = load_dataset(cfg.anchors);
    ModelState pre = load_checkpoint(args.pre_path.empty() ? cfg.checkpoint : args.pre_path);
    ModelState post =
        load_checkpoint(args.post_path.empty() ? cfg.edited_checkpoint : args.post_path);

    std::string dir = cfg.reports_dir;
    for (const char* name : {"/eval_summary.tsv", "/eval_grouped.txt", "/eval_long.tsv"})
        ensure_fresh(dir + name, args.force);

    auto requests = make_requests(post, items);
    EvalReport rep;
    rep.reliability = eval_reliability(post, requests);
    rep.generalization = eval_generalization(post, requests);
    rep.locality = eval_locality(pre, post, anchors);
    if (anchors.size() >= 2)
        rep.general_ability =
            eval_general_ability(pre, post, make_battery(pre, anchors, cfg.battery));

    auto profiles = diagnose_all(pre, items, cfg.tau, cfg.threads);
    std::vector<ItemResult> rows(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        rows[i].item_id = items[i].id;
        rows[i].profile = profiles[i];
        rows[i].condition = "post";
        rows[i].reliability = decode_prompt(post, items[i].question, items[i].subject)
                                  .answer_id == requests[i].target_answer_id;
        rows[i].generalization = decode_prompt(post, items[i].rephrase, items[i].subject)
                                     .answer_id == requests[i].target_answer_id;
    }
    rep.groups = group_results(rows);

    write_text(dir + "/eval_summary.tsv", render_eval_summary(rep));
    write_text(dir + "/eval_grouped.txt", render_grouped_table(rep.groups));
    write_text(dir + "/eval_long.tsv", render_long_tsv(rep.groups));

    Manifest m = start_manifest(args, "eval");
    m.add(dir + "/eval_summary.tsv");
    m.add(dir + "/eval_grouped.txt");
    m.add(dir + "/eval_long.tsv");
    m.write(dir + "/eval_summary.tsv.manifest.json");
    std::cout << render_eval_summary(rep);
    return 0;
}

int cmd_cost(CliArgs& args) {
    RunConfig& cfg = args.cfg;
    CostReport r = cost_report(args.cost_items, args.hard_fraction, cfg.policy, cfg.cost);
    std::string path = cfg.reports_dir + "/cost_report.tsv";
    ensure_fresh(path, args.force);
    write_text(path, render_cost_report(r));
    Manifest m = start_manifest(args, "cost");
    m.add(path);
    m.write(path + ".manifest.json");
    std::cout << render_cost_report(r);
    return 0;
}

int cmd_repro(CliArgs& args) {
    RunConfig& cfg = args.cfg;
    std::string dir = cfg.reports_dir + "/repro_" + args.experiment;
    ReproSetup setup = cfg.repro_setup();

    ReproOutput out;
    if (args.experiment == "cost") {
        out = experiment_cost(cfg.policy, cfg.cost);
    } else {
        Population pop = build_population(setup);
        if (args.experiment == "familiarity")
            out = experiment_familiarity(pop, setup);
        else if (args.experiment == "popularity")
            out = experiment_popularity(pop, setup);
        else if (args.experiment == "qtype")
            out = experiment_qtype(pop, setup);
        else if (args.experiment == "adaptive")
            out = experiment_adaptive(pop, setup);
        else
            fail(errc::usage, "unknown experiment '" + args.experiment + "'");
    }

    Manifest m = start_manifest(args, "repro-" + args.experiment);
    for (const auto& [name, content] : out.files) {
        std::string path = dir + "/" + name;
        ensure_fresh(path, args.force);
        write_text(path, content);
        bool timing = name.find("audit") != std::string::npos;
        m.add(path, !timing);
    }
    std::string verdicts;
    for (const auto& v : out.verdicts) verdicts += v + "\n";
    std::string vpath = dir + "/verdicts.txt";
    ensure_fresh(vpath, args.force);
    write_text(vpath, verdicts);
    m.add(vpath);
    m.write(dir + "/manifest.json");
    std::cout << verdicts;
    std::cout << (out.all_hold ? "all directional findings hold\n"
                               : "WARNING: a directional finding failed\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CliArgs args;
    CLI::App app{"sped: knowledge-aware model editing laboratory"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "read options from an INI-style [section] file");

    RunConfig& cfg = args.cfg;
    app.add_option("--seed", cfg.seed, "global seed; fans out to every component");
    app.add_option("--threads", cfg.threads,
                   "worker cap (default: SPECTRUM_EDIT_THREADS or hardware)");
    app.add_flag("--force", args.force, "overwrite existing outputs");

    app.add_option("--model.hidden_dim", cfg.model.hidden_dim);
    app.add_option("--model.key_dim", cfg.model.key_dim);
    app.add_option("--model.num_layers", cfg.model.num_layers);
    app.add_option("--model.edit_layers", cfg.model.edit_layers)->delimiter(',');
    app.add_option("--model.vocab_size", cfg.model.vocab_size);

    app.add_option("--generator.n_items", cfg.generator.n_items);
    app.add_option("--generator.frac_known", cfg.generator.frac_known);
    app.add_option("--generator.pv_mu", cfg.generator.pv_mu);
    app.add_option("--generator.pv_sigma", cfg.generator.pv_sigma);
    app.add_option("--generator.paraphrase_strength", cfg.generator.paraphrase_strength);
    app.add_option("--generator.n_anchors", cfg.n_anchors);

    app.add_option("--install.entrench_scale", cfg.install.entrench_scale);
    app.add_option("--install.capacity_fraction", cfg.install.capacity_fraction);
    app.add_option("--install.preserved_fraction", cfg.install.preserved_fraction);

    std::string method_default = "alphaedit";
    app.add_option("--editor.method", method_default);
    app.add_option("--editor.lambda", cfg.editor.lambda);
    app.add_option("--editor.nullspace_rtol", cfg.editor.nullspace_rtol);
    app.add_option("--editor.solve_rtol", cfg.editor.solve_rtol);
    app.add_option("--editor.ft_learning_rate", cfg.editor.ft_learning_rate);
    app.add_option("--editor.ft_steps", cfg.editor.ft_steps);
    app.add_option("--editor.passes", cfg.editor.passes);

    app.add_option("--policy.easy_passes", cfg.policy.easy_passes);
    app.add_option("--policy.hard_passes", cfg.policy.hard_passes);

    app.add_option("--cost.per_pass_seconds", cfg.cost.per_pass_seconds);
    app.add_option("--cost.cost_per_hour", cfg.cost.cost_per_hour);

    app.add_option("--eval.battery_size", cfg.battery.size);
    app.add_option("--eval.battery_margin_floor", cfg.battery.margin_floor);
    app.add_option("--spectrum.tau", cfg.tau);

    app.add_option("--paths.dataset", cfg.dataset);
    app.add_option("--paths.anchors", cfg.anchors);
    app.add_option("--paths.checkpoint", cfg.checkpoint);
    app.add_option("--paths.preserved", cfg.preserved);
    app.add_option("--paths.edited_checkpoint", cfg.edited_checkpoint);
    app.add_option("--paths.reports_dir", cfg.reports_dir);

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset and anchor facts");
    auto* install = app.add_subcommand("install", "write base facts into a fresh model");
    auto* diagnose = app.add_subcommand("diagnose", "classify each item on the spectrum");
    auto* edit = app.add_subcommand("edit", "run an editing campaign");
    edit->add_option("--method", args.method, "ft | memit | alphaedit");
    edit->add_option("--strategy", args.strategy, "fixed1 | fixed5 | adaptive");
    edit->add_flag("--batch", args.batch, "group same-strategy items into one batch");
    auto* eval = app.add_subcommand("eval", "evaluate a post-edit checkpoint against a pre one");
    eval->add_option("--pre", args.pre_path, "pre-edit checkpoint (default: paths.checkpoint)");
    eval->add_option("--post", args.post_path,
                     "post-edit checkpoint (default: paths.edited_checkpoint)");
    auto* cost = app.add_subcommand("cost", "pass/cost arithmetic for a diagnosed population");
    cost->add_option("--items", args.cost_items, "population size");
    cost->add_option("--hard-fraction", args.hard_fraction, "fraction diagnosed hard");
    auto* repro = app.add_subcommand(
        "repro", "scripted end-to-end reproduction of one directional finding");
    repro->add_option("--experiment", args.experiment,
                      "familiarity | popularity | qtype | adaptive | cost");

    for (auto* opt : app.get_options())
        if (opt->get_expected_min() > 0) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    try {
        std::vector<std::string> raw(argv + 1, argv + argc);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (raw[i] == "--config" && i + 1 < raw.size()) {
                config_path = raw[i + 1];
            } else if (raw[i].rfind("--config=", 0) == 0) {
                config_path = raw[i].substr(9);
            }
        }
        if (!config_path.empty()) {
            std::vector<std::string> injected = config_file_args(config_path);
            raw.insert(raw.begin(), injected.begin(), injected.end());
        }
        std::vector<std::string> reversed(raw.rbegin(), raw.rend());
        app.parse(reversed);
        args.cfg.editor.method = parse_method(method_default);
        args.cfg.resolve();
        if (gen->parsed()) return cmd_gen_data(args);
        if (install->parsed()) return cmd_install(args);
        if (diagnose->parsed()) return cmd_diagnose(args);
        if (edit->parsed()) return cmd_edit(args);
        if (eval->parsed()) return cmd_eval(args);
        if (cost->parsed()) return cmd_cost(args);
        if (repro->parsed()) return cmd_repro(args);
        return 1;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "sped-error\tclass=1\tkind=Usage\tmsg=" << e.what() << "\n";
        return 1;
    } catch (const sped::error& e) {
        std::cerr << "sped-error\tclass=" << e.exit_class() << "\tkind="
                  << errc_name(e.code()) << "\tmsg=" << e.what() << "\n";
        return e.exit_class();
    } catch (const std::exception& e) {
        std::cerr << "sped-error\tclass=3\tkind=Internal\tmsg=" << e.what() << "\n";
        return 3;
    }
}
