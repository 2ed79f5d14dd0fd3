#pragma once

#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "sped/knowledge.hpp"

namespace sped {

enum class EditMethod { FT, MEMIT, ALPHAEDIT };

inline const char* edit_method_name(EditMethod m) {
    switch (m) {
        case EditMethod::FT: return "ft";
        case EditMethod::MEMIT: return "memit";
        case EditMethod::ALPHAEDIT: return "alphaedit";
    }
    return "?";
}

struct EditRequest {
    KnowledgeItem item;
    int target_answer_id = 0;  // y_e
};

inline std::vector<EditRequest> make_requests(const ModelState& state,
                                              const std::vector<KnowledgeItem>& items) {
    std::vector<EditRequest> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        if (!state.has_answer(it.answer))
            fail(errc::vocabulary_miss,
                 "item '" + it.id + "': target '" + it.answer + "' not in vocabulary");
        out.push_back({it, state.answer_id(it.answer)});
    }
    return out;
}

struct EditConfig {
    EditMethod method = EditMethod::ALPHAEDIT;
    double lambda = 10.0;          // preservation weight (MEMIT)
    double nullspace_rtol = 1e-8;  // projector rank threshold (AlphaEdit)
    double solve_rtol = 3e-3;      // batch-solve singular-value cutoff (AlphaEdit)
    double ft_learning_rate = 0.05;
    int ft_steps = 50;
    int passes = 1;

    void validate() const {
        if (lambda < 0) fail(errc::invalid_config, "lambda must be >= 0");
        if (nullspace_rtol <= 0 || nullspace_rtol >= 1)
            fail(errc::invalid_config, "nullspace_rtol must lie in (0, 1)");
        if (solve_rtol <= 0 || solve_rtol >= 1)
            fail(errc::invalid_config, "solve_rtol must lie in (0, 1)");
        if (ft_learning_rate <= 0) fail(errc::invalid_config, "ft_learning_rate must be > 0");
        if (ft_steps < 1) fail(errc::invalid_config, "ft_steps must be >= 1");
        if (passes < 1) fail(errc::invalid_config, "passes must be >= 1");
    }
};

struct LayerUpdatePlan {
    std::vector<int> layers;     // edit layers, ascending
    std::vector<Mat> keys;       // per layer, d_k x m
    std::vector<Mat> residuals;  // per layer, d_h x m
};

inline Vec target_embedding(const ModelState& st, int answer_id) {
    return st.answer_embeddings.row(answer_id).transpose();
}

// Residual spreading: visiting edit layers in ascending order with E layers
// still to come, each layer is assigned r/E of the current output residual;
// the provisional exact insertion is applied to a scratch state before the
// next layer's keys and residuals are measured, so later layers see the keys
// they will actually meet and do not double-correct.
inline LayerUpdatePlan plan_updates(const ModelState& state,
                                    const std::vector<EditRequest>& batch) {
    if (batch.empty()) fail(errc::empty_batch, "plan_updates: empty batch");
    const int m = int(batch.size());
    std::vector<Vec> h0(m);
    for (int i = 0; i < m; ++i)
        h0[i] = encode_prompt(state, batch[i].item.question, batch[i].item.subject);

    LayerUpdatePlan plan;
    plan.layers = state.config.edit_layers;
    ModelState work = state;
    const int total = int(plan.layers.size());
    for (int idx = 0; idx < total; ++idx) {
        const int layer = plan.layers[idx];
        const double remaining = double(total - idx);
        Mat keys(state.config.key_dim, m);
        Mat resid(state.config.hidden_dim, m);
        for (int i = 0; i < m; ++i) {
            ForwardTrace tr = forward(work, h0[i]);
            keys.col(i) = tr.k[layer];
            resid.col(i) =
                (target_embedding(state, batch[i].target_answer_id) - tr.h.back()) / remaining;
        }
        plan.keys.push_back(keys);
        plan.residuals.push_back(resid);
        work.memories[layer] += least_squares_insert(keys, resid);
    }
    return plan;
}

namespace detail {

// Preserved columns visible to one edit: the batch's own question columns are
// the associations being rewritten and drop out; rephrase columns of edited
// items stay, which is what entrenches an installed old answer against its
// own edit.
struct EffectivePreserved {
    std::vector<Mat> k0;  // per edit layer
    std::vector<Mat> v0;
};

inline EffectivePreserved effective_preserved(const ModelState& state,
                                              const PreservedSet& preserved,
                                              const std::vector<EditRequest>& batch) {
    EffectivePreserved eff;
    const std::size_t n_layers = state.config.edit_layers.size();
    if (preserved.cols() == 0) {
        eff.k0.assign(n_layers, Mat(state.config.key_dim, 0));
        eff.v0.assign(n_layers, Mat(state.config.hidden_dim, 0));
        return eff;
    }
    if (preserved.layers != state.config.edit_layers)
        fail(errc::config_mismatch, "preserved set was built for different edit layers");

    std::unordered_set<std::string> edited;
    for (const auto& req : batch) edited.insert(req.item.id);
    std::vector<Eigen::Index> cols;
    for (Eigen::Index c = 0; c < preserved.cols(); ++c) {
        if (!preserved.col_is_rephrase[c] && edited.count(preserved.item_ids[c])) continue;
        cols.push_back(c);
    }
    for (std::size_t li = 0; li < n_layers; ++li) {
        Mat k(state.config.key_dim, cols.size());
        Mat v(state.config.hidden_dim, cols.size());
        for (std::size_t j = 0; j < cols.size(); ++j) {
            k.col(j) = preserved.k0[li].col(cols[j]);
            v.col(j) = preserved.v0[li].col(cols[j]);
        }
        eff.k0.push_back(std::move(k));
        eff.v0.push_back(std::move(v));
    }
    return eff;
}

// State shared across the passes of one repeated edit; the preserved geometry
// is fixed by the batch, so projectors are computed once.
struct EditContext {
    EffectivePreserved eff;
    std::vector<std::optional<Mat>> projectors;  // per layer, AlphaEdit only
};

inline EditContext make_context(const ModelState& state, const PreservedSet& preserved,
                                const std::vector<EditRequest>& batch, const EditConfig& cfg) {
    EditContext ctx;
    ctx.eff = effective_preserved(state, preserved, batch);
    ctx.projectors.resize(ctx.eff.k0.size());
    if (cfg.method == EditMethod::ALPHAEDIT) {
        for (std::size_t li = 0; li < ctx.eff.k0.size(); ++li)
            ctx.projectors[li] = nullspace_projector(ctx.eff.k0[li], cfg.nullspace_rtol);
    }
    return ctx;
}

}  // namespace detail

// Closed-form minimizer of |(W+D)K1 - V1|^2 + lambda |(W+D)K0 - V0|^2 with
// V1 = W K1 + R. The V0 term keeps the pull toward the recorded preserved
// values even when W K0 has drifted since installation.
inline Mat memit_delta(const Mat& w, const Mat& keys, const Mat& resid, const Mat& k0,
                       const Mat& v0, double lambda) {
    Mat a = keys * keys.transpose();
    Mat b = resid * keys.transpose();
    if (lambda > 0 && k0.cols() > 0) {
        a += lambda * k0 * k0.transpose();
        b += lambda * (v0 - w * k0) * k0.transpose();
    }
    Mat delta = solve_spd(a, b.transpose()).transpose();
    require_finite(delta, "memit_delta");
    return delta;
}

// D' = R pinv(P K1) P; any update of this shape satisfies D' K0 = 0.
inline Mat alphaedit_delta(const Mat& keys, const Mat& resid, const Mat& proj,
                           double solve_rtol) {
    Mat projected = proj * keys;
    if (projected.norm() < 1e-12 * std::max(1e-300, keys.norm()))
        fail(errc::projected_keys_degenerate, "new keys lie entirely in the preserved span");
    Mat delta = resid * pinv(projected, solve_rtol) * proj;
    require_finite(delta, "alphaedit_delta");
    return delta;
}

namespace detail {

inline ModelState memit_apply(const ModelState& state, const std::vector<EditRequest>& batch,
                              const EditContext& ctx, const EditConfig& cfg) {
    LayerUpdatePlan plan = plan_updates(state, batch);
    ModelState out = state;
    for (std::size_t idx = 0; idx < plan.layers.size(); ++idx) {
        const int layer = plan.layers[idx];
        out.memories[layer] += memit_delta(out.memories[layer], plan.keys[idx],
                                           plan.residuals[idx], ctx.eff.k0[idx],
                                           ctx.eff.v0[idx], cfg.lambda);
    }
    return out;
}

inline ModelState alphaedit_apply(const ModelState& state, const std::vector<EditRequest>& batch,
                                  const EditContext& ctx, const EditConfig& cfg) {
    LayerUpdatePlan plan = plan_updates(state, batch);
    ModelState out = state;
    for (std::size_t idx = 0; idx < plan.layers.size(); ++idx) {
        const int layer = plan.layers[idx];
        try {
            out.memories[layer] += alphaedit_delta(plan.keys[idx], plan.residuals[idx],
                                                   *ctx.projectors[idx], cfg.solve_rtol);
        } catch (const error& e) {
            if (e.code() != errc::projected_keys_degenerate) throw;
            std::string ids;
            for (const auto& req : batch) {
                if (!ids.empty()) ids += ", ";
                ids += req.item.id;
            }
            fail(errc::projected_keys_degenerate,
                 "new keys lie entirely in the preserved span at layer " +
                     std::to_string(layer) + "; affected items: " + ids);
        }
    }
    return out;
}

}  // namespace detail

inline ModelState memit_edit(const ModelState& state, const std::vector<EditRequest>& batch,
                             const PreservedSet& preserved, const EditConfig& cfg) {
    cfg.validate();
    if (batch.empty()) fail(errc::empty_batch, "memit_edit: empty batch");
    EditConfig c = cfg;
    c.method = EditMethod::MEMIT;
    return detail::memit_apply(state, batch, detail::make_context(state, preserved, batch, c), c);
}

inline ModelState alphaedit_edit(const ModelState& state, const std::vector<EditRequest>& batch,
                                 const PreservedSet& preserved, const EditConfig& cfg) {
    cfg.validate();
    if (batch.empty()) fail(errc::empty_batch, "alphaedit_edit: empty batch");
    EditConfig c = cfg;
    c.method = EditMethod::ALPHAEDIT;
    return detail::alphaedit_apply(state, batch, detail::make_context(state, preserved, batch, c),
                                   c);
}

// Mean squared output error over the batch; gradients flow through the frozen
// maps analytically. Exposed for the finite-difference check.
inline double ft_loss(const ModelState& state, const std::vector<EditRequest>& batch,
                      const std::vector<Vec>& h0) {
    double loss = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        ForwardTrace tr = forward(state, h0[i]);
        loss += (tr.h.back() - target_embedding(state, batch[i].target_answer_id)).squaredNorm();
    }
    return loss / double(batch.size());
}

inline std::vector<Mat> ft_gradient(const ModelState& state,
                                    const std::vector<EditRequest>& batch,
                                    const std::vector<Vec>& h0) {
    const auto& layers = state.config.edit_layers;
    std::vector<Mat> grads(layers.size(),
                           Mat::Zero(state.config.hidden_dim, state.config.key_dim));
    const double inv_m = 1.0 / double(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        ForwardTrace tr = forward(state, h0[i]);
        Vec delta =
            2.0 * inv_m * (tr.h.back() - target_embedding(state, batch[i].target_answer_id));
        for (int l = state.config.num_layers - 1; l >= 0; --l) {
            for (std::size_t li = 0; li < layers.size(); ++li)
                if (layers[li] == l) grads[li] += delta * tr.k[l].transpose();
            Vec back = state.memories[l].transpose() * delta;
            for (int r = 0; r < back.size(); ++r)
                if (tr.k[l](r) <= 0.0) back(r) = 0.0;
            delta += state.key_a[l].transpose() * back;
        }
    }
    return grads;
}

inline ModelState ft_edit(const ModelState& state, const std::vector<EditRequest>& batch,
                          const EditConfig& cfg) {
    cfg.validate();
    if (batch.empty()) fail(errc::empty_batch, "ft_edit: empty batch");
    std::vector<Vec> h0(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
        h0[i] = encode_prompt(state, batch[i].item.question, batch[i].item.subject);

    ModelState out = state;
    const double initial = std::max(ft_loss(out, batch, h0), 1e-30);
    for (int step = 0; step < cfg.ft_steps; ++step) {
        std::vector<Mat> grads = ft_gradient(out, batch, h0);
        for (std::size_t li = 0; li < state.config.edit_layers.size(); ++li)
            out.memories[state.config.edit_layers[li]] -= cfg.ft_learning_rate * grads[li];
        double loss = ft_loss(out, batch, h0);
        if (!std::isfinite(loss) || loss > 1e6 * initial)
            fail(errc::divergence, "fine-tuning diverged at step " + std::to_string(step + 1) +
                                       " (loss " + std::to_string(loss) + ", initial " +
                                       std::to_string(initial) + "); lower ft_learning_rate");
    }
    return out;
}

struct PassLog {
    int pass = 0;
    double residual_pre = 0.0;   // sqrt(sum_i |e(y_i) - h_L(i)|^2) before the pass
    double residual_post = 0.0;  // same, after the pass
    int decode_hits = 0;         // batch items whose question decodes to the target
};

inline double batch_residual_norm(const ModelState& state,
                                  const std::vector<EditRequest>& batch) {
    double acc = 0;
    for (const auto& req : batch) {
        ForwardTrace tr =
            forward(state, encode_prompt(state, req.item.question, req.item.subject));
        acc += (target_embedding(state, req.target_answer_id) - tr.h.back()).squaredNorm();
    }
    return std::sqrt(acc);
}

inline int batch_decode_hits(const ModelState& state, const std::vector<EditRequest>& batch) {
    int hits = 0;
    for (const auto& req : batch)
        hits += decode_prompt(state, req.item.question, req.item.subject).answer_id ==
                req.target_answer_id;
    return hits;
}

// Applies the configured editor cfg.passes times. Every pass re-plans from
// the current state: keys move between passes, and a stale plan would quietly
// weaken the intensive strategy.
inline std::pair<ModelState, std::vector<PassLog>> repeat_edit(
    const ModelState& state, const std::vector<EditRequest>& batch,
    const PreservedSet& preserved, const EditConfig& cfg) {
    cfg.validate();
    if (batch.empty()) fail(errc::empty_batch, "repeat_edit: empty batch");
    detail::EditContext ctx = detail::make_context(state, preserved, batch, cfg);

    ModelState cur = state;
    std::vector<PassLog> log;
    log.reserve(cfg.passes);
    for (int pass = 1; pass <= cfg.passes; ++pass) {
        PassLog entry;
        entry.pass = pass;
        entry.residual_pre = batch_residual_norm(cur, batch);
        switch (cfg.method) {
            case EditMethod::FT: cur = ft_edit(cur, batch, cfg); break;
            case EditMethod::MEMIT: cur = detail::memit_apply(cur, batch, ctx, cfg); break;
            case EditMethod::ALPHAEDIT:
                cur = detail::alphaedit_apply(cur, batch, ctx, cfg);
                break;
        }
        entry.residual_post = batch_residual_norm(cur, batch);
        entry.decode_hits = batch_decode_hits(cur, batch);
        log.push_back(entry);
    }
    return {std::move(cur), std::move(log)};
}

}  // namespace sped
