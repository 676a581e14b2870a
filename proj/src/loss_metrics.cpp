#include "nasdet/loss_metrics.hpp"

#include <cmath>

#include "nasdet/errors.hpp"
#include "nasdet/supernet.hpp"

namespace nasdet {

double bce_dice_loss(const Tensor& pred, const Tensor& target, Real dice_eps) {
    NoGradGuard guard;
    return fn::bce_dice(constant(pred), target, dice_eps).value().item();
}

namespace {

template <class Term>
LossBundle compose(const Var& out_map, std::span<const Var> branch_maps, const LossOptions& options, Term term) {
    if (int(branch_maps.size()) != options.branches) {
        throw ConfigError("expected " + std::to_string(options.branches) + " branch predictions, got " +
                          std::to_string(branch_maps.size()));
    }
    LossBundle b;
    const Var out = term(out_map);
    b.loss_out = out.value().item();
    std::vector<Var> terms{out};
    for (const auto& m : branch_maps) {
        if (options.deep_supervision) {
            const Var l = term(m);
            b.branch.push_back(l.value().item());
            terms.push_back(l);
        } else {
            b.branch.push_back(0.0);
        }
    }
    for (double v : b.branch) b.loss_bra += v;
    b.total = fn::add_n(terms);
    b.loss_total = b.total.value().item();
    return b;
}

}  // namespace

LossBundle total_loss(const Var& out_pred, std::span<const Var> branch_preds, const Tensor& target,
                      const LossOptions& options) {
    return compose(out_pred, branch_preds, options,
                   [&](const Var& p) { return fn::bce_dice(p, target, options.dice_eps); });
}

LossBundle total_loss_logits(const Var& out_logits, std::span<const Var> branch_logits, const Tensor& target,
                             const LossOptions& options) {
    return compose(out_logits, branch_logits, options,
                   [&](const Var& z) { return fn::bce_dice_logits(z, target, options.dice_eps); });
}

LossBundle total_loss(const NetworkOutput& out, const Tensor& target, const LossOptions& options) {
    return total_loss_logits(out.logits, out.branch_logits, target, options);
}

void check_composition(const LossBundle& b) {
    double sum = 0;
    for (double v : b.branch) sum += v;
    if (std::abs(sum - b.loss_bra) > 1e-6 || std::abs(b.loss_total - (b.loss_out + b.loss_bra)) > 1e-6) {
        throw StateError("loss bundle does not compose: out " + std::to_string(b.loss_out) + " bra " +
                         std::to_string(b.loss_bra) + " total " + std::to_string(b.loss_total));
    }
}

// ---------------------------------------------------------------------------

Confusion confusion(std::span<const Real> pred, std::span<const Real> target, double threshold) {
    if (pred.size() != target.size()) throw ShapeError("prediction and target sizes differ");
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Real t = target[i];
        if (t != 0 && t != 1) throw DataError("target is not binary: value " + std::to_string(t));
        const bool p = pred[i] >= threshold;
        if (t == 1) {
            p ? ++c.tp : ++c.fn;
        } else {
            p ? ++c.fp : ++c.tn;
        }
    }
    return c;
}

ImageScores image_scores(const Confusion& c) {
    ImageScores s;
    const std::int64_t total = c.tp + c.fp + c.fn + c.tn;
    s.pa = total > 0 ? double(c.tp + c.tn) / double(total) : 1.0;
    if (c.tp + c.fp + c.fn == 0) {
        s.iou = s.f1 = 1.0;
        s.pa = 1.0;
        return s;
    }
    s.iou = double(c.tp) / double(c.tp + c.fp + c.fn);
    s.f1 = 2.0 * double(c.tp) / double(2 * c.tp + c.fp + c.fn);
    return s;
}

void MetricsAccumulator::add(const Tensor& pred, const Tensor& target) {
    if (!(pred.shape() == target.shape()) || pred.shape().c != 1) {
        throw ShapeError("metrics expect matching N x 1 x H x W maps, got " + to_string(pred.shape()) + " and " +
                         to_string(target.shape()));
    }
    const Shape s = pred.shape();
    for (int n = 0; n < s.n; ++n) {
        const std::span<const Real> p(pred.plane(n, 0), std::size_t(s.plane()));
        const std::span<const Real> t(target.plane(n, 0), std::size_t(s.plane()));
        scores_.push_back(image_scores(confusion(p, t, threshold_)));
    }
}

MetricsRecord MetricsAccumulator::result() const {
    MetricsRecord r;
    r.images = std::int64_t(scores_.size());
    if (scores_.empty()) return r;
    for (const auto& s : scores_) {
        r.iou += s.iou;
        r.f1 += s.f1;
        r.pa += s.pa;
    }
    r.iou /= double(scores_.size());
    r.f1 /= double(scores_.size());
    r.pa /= double(scores_.size());
    return r;
}

MetricsRecord segmentation_metrics(const Tensor& pred, const Tensor& target, double threshold) {
    MetricsAccumulator acc(threshold);
    acc.add(pred, target);
    return acc.result();
}

// ---------------------------------------------------------------------------

std::int64_t op_flops(const fn::OpEvent& e) {
    const std::int64_t out = e.out.numel();
    const std::string_view k = e.kind;
    if (k == "conv2d") {
        const std::int64_t macs = std::int64_t(e.kernel) * e.kernel * e.in.c * e.out.c * e.out.h * e.out.w / e.groups;
        return 2 * macs * e.out.n + (e.bias ? out : 0);
    }
    if (k == "linear") return 2 * std::int64_t(e.in.c) * e.out.c * e.out.n + (e.bias ? out : 0);
    // normalization applies one scale and one shift
    if (k == "batch_norm") return 2 * out;
    if (k == "relu" || k == "sigmoid" || k == "softmax" || k == "max_pool" || k == "avg_pool" ||
        k == "global_avg_pool" || k == "channel_pool" || k == "scale" || k == "upsample") {
        return out;
    }
    if (k == "add") return std::int64_t(std::max(0, e.arity - 1)) * out;
    if (k == "mix") return std::int64_t(std::max(0, 2 * e.arity - 1)) * out;
    if (k == "dot") return 2 * e.in.numel();
    if (k == "concat" || k == "subsample" || k == "gather" || k == "loss") return 0;
    throw AccountingError("no FLOP rule for layer '" + std::string(k) + "'");
}

Complexity count_params_flops(const Module& module, const std::function<void()>& forward) {
    Complexity c;
    c.params = module.parameter_count();
    NoGradGuard guard;
    fn::TraceScope scope;
    forward();
    for (const auto& e : scope.events()) {
        const std::int64_t f = op_flops(e);
        c.flops += f;
        c.flops_by_kind[std::string(e.kind)] += f;
    }
    return c;
}

Complexity count_params_flops(Network& network, Shape input) {
    input.n = 1;
    // inference mode so counting never touches running statistics
    const bool was_training = network.training();
    network.set_training(false);
    Complexity c;
    try {
        c = count_params_flops(network, [&] { network.forward(constant(Tensor(input))); });
    } catch (...) {
        network.set_training(was_training);
        throw;
    }
    network.set_training(was_training);
    return c;
}

}  // namespace nasdet
