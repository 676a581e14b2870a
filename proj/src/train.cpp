#include "nasdet/train.hpp"

#include <cmath>
#include <string>

#include "nasdet/errors.hpp"
#include "nasdet/rng.hpp"

namespace nasdet {

void RetrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("retrain epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("retrain batch size must be positive");
    if (!(lr > 0)) throw ConfigError("retrain learning rate must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0,1)");
    if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
    if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must lie in (0,1)");
}

RetrainState init_retrain(const RetrainConfig& cfg) {
    cfg.validate();
    RetrainState s;
    s.opt = Sgd(cfg.lr, cfg.momentum, cfg.weight_decay);
    return s;
}

TrainRecord train_epoch(Network& net, Sgd& opt, const Dataset& data, const RetrainConfig& cfg, std::uint64_t seed,
                        int epoch) {
    if (data.empty()) throw DataError("training set is empty");
    net.set_training(true);
    net.set_requires_grad(true);
    LossOptions lo;
    lo.deep_supervision = cfg.deep_supervision;
    lo.branches = net.config().levels();
    const auto order = permutation(data.size(), derive_seed(seed, "retrain.batches", std::uint64_t(epoch)));
    TrainRecord rec;
    rec.epoch = epoch;
    int n = 0;
    for (const auto& batch : chunk(order, cfg.batch_size)) {
        const Batch b = make_batch(data, batch);
        net.zero_grad();
        const NetworkOutput out = net.forward(constant(b.images));
        const LossBundle loss = total_loss(out, b.masks, lo);
        if (!std::isfinite(loss.loss_total)) {
            throw DivergenceError("non-finite loss in retraining epoch " + std::to_string(epoch));
        }
        backward(loss.total);
        const auto params = net.named_parameters();
        opt.step(params);
        rec.loss_out += loss.loss_out;
        rec.loss_bra += loss.loss_bra;
        rec.loss_total += loss.loss_total;
        ++n;
    }
    net.zero_grad();
    rec.loss_out /= n;
    rec.loss_bra /= n;
    rec.loss_total /= n;
    return rec;
}

void retrain(Network& net, const Dataset& data, const RetrainConfig& cfg, std::uint64_t seed, RetrainState& state,
             const RetrainHooks& hooks) {
    cfg.validate();
    while (state.epoch < cfg.epochs) {
        const TrainRecord rec = train_epoch(net, state.opt, data, cfg, seed, state.epoch);
        state.history.push_back(rec);
        ++state.epoch;
        if (hooks.on_epoch) hooks.on_epoch(rec);
        if (hooks.on_checkpoint) hooks.on_checkpoint(state);
    }
}

Evaluation evaluate(Network& net, const Dataset& data, double threshold, int batch_size, bool keep_predictions) {
    if (data.empty()) throw DataError("evaluation set is empty");
    Evaluation ev;
    const Shape in = data.front().image.shape();
    const Complexity cx = count_params_flops(net, in);
    net.set_training(false);
    MetricsAccumulator acc(threshold);
    {
        NoGradGuard guard;
        std::vector<std::size_t> order(data.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (const auto& batch : chunk(order, batch_size)) {
            const Batch b = make_batch(data, batch);
            const Tensor pred = net.forward(constant(b.images)).prediction.value();
            acc.add(pred, b.masks);
            if (keep_predictions) {
                const Shape s = pred.shape();
                for (int i = 0; i < s.n; ++i) {
                    Tensor one({1, 1, s.h, s.w});
                    std::copy_n(pred.plane(i, 0), s.plane(), one.data());
                    ev.predictions.push_back(std::move(one));
                }
            }
        }
    }
    net.set_training(true);
    ev.metrics = acc.result();
    ev.metrics.params = cx.params;
    ev.metrics.flops = cx.flops;
    return ev;
}

}  // namespace nasdet
