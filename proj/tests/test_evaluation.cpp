#include <catch2/catch_amalgamated.hpp>

#include "sped/evaluation.hpp"
#include "sped/repro.hpp"

using namespace sped;

namespace {

ModelConfig eval_config(std::uint64_t seed) {
    ModelConfig c;
    c.hidden_dim = 32;
    c.key_dim = 96;
    c.num_layers = 4;
    c.edit_layers = {1, 2};
    c.vocab_size = 64;
    c.seed = seed;
    return c;
}

GeneratorConfig gen(int n, std::uint64_t seed, double frac_known = 0.0) {
    GeneratorConfig g;
    g.n_items = n;
    g.seed = seed;
    g.vocab_size = 64;
    g.frac_known = frac_known;
    return g;
}

ItemResult make_result(const std::string& id, Familiarity f, const std::string& condition,
                       bool success) {
    ItemResult r;
    r.item_id = id;
    r.profile = diagnose(id, Popularity::Famous, f, QuestionType::Why);
    r.condition = condition;
    r.reliability = success;
    r.generalization = success;
    return r;
}

}  // namespace

TEST_CASE("rate rendering rounds half to even and marks empty groups") {
    CHECK(render_rate({84, 100}) == "0.84");
    CHECK(render_rate({1, 1}) == "1.00");
    CHECK(render_rate({0, 7}) == "0.00");
    CHECK(render_rate({1, 8}) == "0.12");   // 0.125 -> even neighbor 0.12
    CHECK(render_rate({3, 8}) == "0.38");   // 0.375 -> even neighbor 0.38
    CHECK(render_rate({1, 3}) == "0.33");
    CHECK(render_rate({2, 3}) == "0.67");
    CHECK(render_rate({0, 0}) == "—");  // undefined, never rendered as 0
}

TEST_CASE("reliability counts exact-prompt decodes") {
    ModelState st = init_model(eval_config(501));
    auto items = generate_synthetic(gen(1, 503));
    auto reqs = make_requests(st, items);
    CHECK(eval_reliability(st, reqs).value() == 0.0);

    InstallResult inst = install_facts(st, items);  // installs the answer itself
    Rate r = eval_reliability(inst.state, make_requests(inst.state, items));
    CHECK(r.num == 1);
    CHECK(r.den == 1);
}

TEST_CASE("zero edited items yields the undefined marker") {
    ModelState st = init_model(eval_config(505));
    Rate r = eval_reliability(st, {});
    CHECK(!r.defined());
    CHECK(render_rate(r) == "—");
}

TEST_CASE("reliability equals a brute-force recount") {
    ModelState st = init_model(eval_config(507));
    auto items = generate_synthetic(gen(30, 509, 0.5));
    std::vector<KnowledgeItem> install_list;
    for (const auto& it : items)
        if (it.old_answer) install_list.push_back(it);
    InstallResult inst = install_facts(st, install_list);
    auto reqs = make_requests(inst.state, items);
    Rate r = eval_reliability(inst.state, reqs);

    long long recount = 0;  // independent loop straight over decode
    for (const auto& req : reqs) {
        Vec h0 = encode_prompt(inst.state, req.item.question, req.item.subject);
        recount += decode(inst.state, forward(inst.state, h0).h.back()).answer_id ==
                   req.target_answer_id;
    }
    CHECK(r.num == recount);
    CHECK(r.den == 30);
}

TEST_CASE("generalization equals reliability when rephrase is the question") {
    ModelState st = init_model(eval_config(511));
    GeneratorConfig g = gen(12, 513, 0.5);
    g.paraphrase_strength = 0.0;
    auto items = generate_synthetic(g);
    std::vector<KnowledgeItem> install_list;
    for (const auto& it : items)
        if (it.old_answer) install_list.push_back(it);
    InstallResult inst = install_facts(st, install_list);
    auto reqs = make_requests(inst.state, items);
    Rate rel = eval_reliability(inst.state, reqs);
    Rate gen_rate = eval_generalization(inst.state, reqs);
    CHECK(rel.num == gen_rate.num);
    CHECK(rel.den == gen_rate.den);
}

TEST_CASE("locality of an identity edit is one") {
    ModelState st = init_model(eval_config(517));
    auto anchors = generate_synthetic(gen(8, 519));
    InstallResult inst = install_facts(st, anchors);
    Rate r = eval_locality(inst.state, inst.state, anchors);
    CHECK(r.num == r.den);
    CHECK(r.den == 8);
}

TEST_CASE("locality rejects mismatched configurations") {
    ModelState a = init_model(eval_config(521));
    ModelState b = init_model(eval_config(523));
    b.config.seed = 999;
    CHECK_THROWS_MATCHES(eval_locality(a, b, {}), error,
                         Catch::Matchers::Predicate<error>([](const error& e) {
                             return e.code() == errc::config_mismatch;
                         }));
}

TEST_CASE("alphaedit locality is exactly one, ft strictly below") {
    ModelState st = init_model(eval_config(527));
    auto anchors = generate_synthetic(gen(20, 529));
    InstallResult inst = install_facts(st, anchors);
    REQUIRE(inst.report.excluded.empty());
    GeneratorConfig eg = gen(25, 531);
    eg.id_prefix = "edit";
    auto edits = generate_synthetic(eg);
    auto reqs = make_requests(inst.state, edits);

    ModelState alpha = alphaedit_edit(inst.state, reqs, inst.preserved, EditConfig{});
    Rate alpha_loc = eval_locality(inst.state, alpha, anchors);
    CHECK(alpha_loc.num == alpha_loc.den);

    EditConfig ft_cfg;
    ft_cfg.ft_steps = 100;
    ModelState ft = ft_edit(inst.state, reqs, ft_cfg);
    Rate ft_loc = eval_locality(inst.state, ft, anchors);
    CHECK(ft_loc.num < ft_loc.den);
}

TEST_CASE("general ability battery needs two preserved items") {
    ModelState st = init_model(eval_config(533));
    auto anchors = generate_synthetic(gen(1, 537));
    CHECK_THROWS_MATCHES(make_battery(st, anchors), error,
                         Catch::Matchers::Predicate<error>([](const error& e) {
                             return e.code() == errc::insufficient_preserved;
                         }));
}

TEST_CASE("general ability of no edit is one") {
    ModelState st = init_model(eval_config(539));
    auto anchors = generate_synthetic(gen(10, 541));
    InstallResult inst = install_facts(st, anchors);
    ProbeBattery battery = make_battery(inst.state, anchors);
    REQUIRE(int(battery.probes.size()) > 100);
    Rate r = eval_general_ability(inst.state, inst.state, battery);
    CHECK(r.num == r.den);
}

TEST_CASE("alpha-one probes reduce to locality on their first parent") {
    ModelState st = init_model(eval_config(543));
    auto anchors = generate_synthetic(gen(6, 547));
    InstallResult inst = install_facts(st, anchors);
    BatteryOptions opts;
    opts.alphas = {1.0, 1.0, 1.0};
    opts.margin_floor = 0.0;
    ProbeBattery battery = make_battery(inst.state, anchors, opts);
    GeneratorConfig eg = gen(5, 549);
    eg.id_prefix = "edit";
    auto reqs = make_requests(inst.state, generate_synthetic(eg));
    ModelState post = alphaedit_edit(inst.state, reqs, inst.preserved, EditConfig{});
    // with alpha = 1 each probe is exactly a preserved prompt; projection
    // keeps them fixed, so the score must be perfect
    Rate r = eval_general_ability(inst.state, post, battery);
    CHECK(r.num == r.den);
}

TEST_CASE("renderer reproduces hand-built familiarity cells verbatim") {
    std::vector<ItemResult> rows;
    auto fill = [&](Familiarity f, const std::string& cond, int hits, int total) {
        for (int i = 0; i < total; ++i)
            rows.push_back(make_result(familiarity_name(f) + cond + std::to_string(i), f, cond,
                                       i < hits));
    };
    // two conditions mirroring two model columns of a per-method row
    fill(Familiarity::Known, "m1", 84, 100);
    fill(Familiarity::Unknown, "m1", 88, 100);
    fill(Familiarity::Known, "m2", 82, 100);
    fill(Familiarity::Unknown, "m2", 87, 100);

    GroupedResults gr = group_results(rows);
    CHECK(render_rate(gr.success_rate("familiarity", "Known", "m1")) == "0.84");
    CHECK(render_rate(gr.success_rate("familiarity", "Unknown", "m1")) == "0.88");
    CHECK(render_rate(gr.success_rate("familiarity", "Known", "m2")) == "0.82");
    CHECK(render_rate(gr.success_rate("familiarity", "Unknown", "m2")) == "0.87");

    std::string table = render_grouped_table(gr);
    CHECK(table.find("0.84") != std::string::npos);
    CHECK(table.find("0.88") != std::string::npos);
    CHECK(table.find("0.82") != std::string::npos);
    CHECK(table.find("0.87") != std::string::npos);
    // a group nobody populated renders as an em dash
    CHECK(table.find("—") != std::string::npos);
}

TEST_CASE("single-item population shows its binary outcome in every dimension") {
    std::vector<ItemResult> rows = {make_result("only", Familiarity::Known, "1x", true)};
    GroupedResults gr = group_results(rows);
    CHECK(render_rate(gr.success_rate("familiarity", "Known", "1x")) == "1.00");
    CHECK(render_rate(gr.success_rate("popularity", "Famous", "1x")) == "1.00");
    CHECK(render_rate(gr.success_rate("question_type", "Why", "1x")) == "1.00");
    CHECK(render_rate(gr.success_rate("difficulty", "Hard", "1x")) == "1.00");
}

TEST_CASE("group cells partition the population") {
    GeneratorConfig g = gen(50, 551, 0.5);
    auto items = generate_synthetic(g);
    std::vector<ItemResult> rows;
    PopularityModel pop = fit_popularity(items);
    for (const auto& it : items) {
        ItemResult r;
        r.item_id = it.id;
        r.profile = diagnose(it.id, classify_popularity(pop, it.page_views),
                             it.old_answer ? Familiarity::Known : Familiarity::Unknown,
                             classify_question_type(it.question));
        r.condition = "1x";
        r.reliability = true;
        rows.push_back(r);
    }
    GroupedResults gr = group_results(rows);
    for (const auto& dim : gr.dims) {
        long long total = 0;
        for (const auto& group : dim.cells) total += group[0].total;
        CHECK(total == 50);
    }
    std::string tsv = render_long_tsv(gr);
    CHECK(tsv.find("question_type\tWhich\tsuccess\t1x") != std::string::npos);
}

TEST_CASE("evaluation leaves the pre state untouched") {
    ModelState st = init_model(eval_config(553));
    auto anchors = generate_synthetic(gen(6, 557));
    InstallResult inst = install_facts(st, anchors);
    ModelState snapshot = inst.state;
    auto reqs = make_requests(inst.state, anchors);
    eval_reliability(inst.state, reqs);
    eval_generalization(inst.state, reqs);
    eval_locality(inst.state, inst.state, anchors);
    eval_general_ability(inst.state, inst.state, make_battery(inst.state, anchors));
    for (int l = 0; l < st.config.num_layers; ++l)
        CHECK(inst.state.memories[l] == snapshot.memories[l]);
}
