#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "sped/knowledge.hpp"

namespace sped {

enum class Popularity { Famous, Unfamous };
enum class Familiarity { Known, Unknown };
enum class Difficulty { Hard, Easy };

enum class HardReason { Known, Unfamous, WhichType };

inline const char* popularity_name(Popularity p) {
    return p == Popularity::Famous ? "Famous" : "Unfamous";
}
inline const char* familiarity_name(Familiarity f) {
    return f == Familiarity::Known ? "Known" : "Unknown";
}
inline const char* difficulty_name(Difficulty d) {
    return d == Difficulty::Hard ? "Hard" : "Easy";
}
inline const char* hard_reason_name(HardReason r) {
    switch (r) {
        case HardReason::Known: return "Known";
        case HardReason::Unfamous: return "Unfamous";
        case HardReason::WhichType: return "WhichType";
    }
    return "?";
}

struct KnowledgeProfile {
    std::string item_id;
    Popularity popularity = Popularity::Unfamous;
    Familiarity familiarity = Familiarity::Unknown;
    QuestionType question_type = QuestionType::Others;
    Difficulty difficulty = Difficulty::Easy;
    std::vector<HardReason> reasons;
};

struct PopularityModel {
    long long threshold = 0;
    enum class Source { MedianOfDataset, Fixed } source = Source::MedianOfDataset;
};

// threshold = median page views (lower median for even counts)
inline PopularityModel fit_popularity(const std::vector<KnowledgeItem>& items) {
    if (items.size() < 2)
        fail(errc::too_few_items, "fit_popularity needs at least 2 items, got " +
                                      std::to_string(items.size()));
    std::vector<long long> views;
    views.reserve(items.size());
    for (const auto& it : items) views.push_back(it.page_views);
    std::sort(views.begin(), views.end());
    std::size_t n = views.size();
    long long median = (n % 2 == 1) ? views[n / 2] : views[n / 2 - 1];
    return {median, PopularityModel::Source::MedianOfDataset};
}

inline Popularity classify_popularity(const PopularityModel& model, long long views) {
    return views > model.threshold ? Popularity::Famous : Popularity::Unfamous;
}

// SliCK-style probe, desk scale: with one deterministic decoder, prompt
// variation substitutes for decode variation. Known only when both the
// question and the rephrase recover the pre-edit truth with similarity >= tau.
inline Familiarity probe_familiarity(const ModelState& state, const KnowledgeItem& item,
                                     double tau = 0.9) {
    const std::string& truth = item.pre_edit_truth();
    if (!state.has_answer(truth))
        fail(errc::vocabulary_miss,
             "item '" + item.id + "': probe target '" + truth + "' not in vocabulary");
    int target = state.answer_id(truth);
    for (const std::string* text : {&item.question, &item.rephrase}) {
        Prediction pred = decode_prompt(state, *text, item.subject);
        if (pred.answer_id != target || pred.similarity < tau) return Familiarity::Unknown;
    }
    return Familiarity::Known;
}

// First interrogative among the leading three tokens wins; "In which year..."
// is a Which question even though "which" is not token zero.
inline QuestionType classify_question_type(const std::string& question) {
    std::vector<std::string> toks = tokenize(question);
    if (toks.empty()) fail(errc::empty_question, "question is empty");
    std::size_t limit = std::min<std::size_t>(3, toks.size());
    for (std::size_t i = 0; i < limit; ++i) {
        const std::string& t = toks[i];
        if (t == "who" || t == "whom" || t == "whose") return QuestionType::Who;
        if (t == "what") return QuestionType::What;
        if (t == "when") return QuestionType::When;
        if (t == "where") return QuestionType::Where;
        if (t == "which") return QuestionType::Which;
        if (t == "why") return QuestionType::Why;
        if (t == "how") return QuestionType::How;
    }
    return QuestionType::Others;
}

// Stage-1 ruling: Hard iff Known, Unfamous, or Which-type; reasons record
// every triggered rule.
inline KnowledgeProfile diagnose(const std::string& item_id, Popularity popularity,
                                 Familiarity familiarity, QuestionType question_type) {
    KnowledgeProfile p;
    p.item_id = item_id;
    p.popularity = popularity;
    p.familiarity = familiarity;
    p.question_type = question_type;
    if (familiarity == Familiarity::Known) p.reasons.push_back(HardReason::Known);
    if (popularity == Popularity::Unfamous) p.reasons.push_back(HardReason::Unfamous);
    if (question_type == QuestionType::Which) p.reasons.push_back(HardReason::WhichType);
    p.difficulty = p.reasons.empty() ? Difficulty::Easy : Difficulty::Hard;
    return p;
}

inline KnowledgeProfile diagnose_item(const ModelState& state, const PopularityModel& pop,
                                      const KnowledgeItem& item, double tau = 0.9) {
    return diagnose(item.id, classify_popularity(pop, item.page_views),
                    probe_familiarity(state, item, tau), classify_question_type(item.question));
}

inline std::vector<KnowledgeProfile> diagnose_all(const ModelState& state,
                                                  const std::vector<KnowledgeItem>& items,
                                                  double tau = 0.9,
                                                  unsigned threads = 1) {
    PopularityModel pop = fit_popularity(items);
    std::vector<KnowledgeProfile> out(items.size());
    parallel_for(items.size(), threads,
                 [&](std::size_t i) { out[i] = diagnose_item(state, pop, items[i], tau); });
    return out;
}

inline std::string render_diagnosis_report(const std::vector<KnowledgeProfile>& profiles) {
    std::string out = "item_id\tpopularity\tfamiliarity\tquestion_type\tdifficulty\treasons\n";
    for (const auto& p : profiles) {
        out += p.item_id;
        out += '\t';
        out += popularity_name(p.popularity);
        out += '\t';
        out += familiarity_name(p.familiarity);
        out += '\t';
        out += kQuestionTypeNames[int(p.question_type)];
        out += '\t';
        out += difficulty_name(p.difficulty);
        out += '\t';
        if (p.reasons.empty()) out += "-";
        for (std::size_t i = 0; i < p.reasons.size(); ++i) {
            if (i) out += ',';
            out += hard_reason_name(p.reasons[i]);
        }
        out += '\n';
    }
    return out;
}

}  // namespace sped
