#include "finegrain/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace fg {

double schedule_lr(const Schedule& s, std::int64_t step) {
    if (step < 0) throw ConfigError("schedule_lr: negative step");
    if (s.kind == Schedule::Kind::LinearDecay) {
        if (s.total_steps < 1) throw ConfigError("schedule_lr: linear decay requires total_steps >= 1");
        if (step >= s.total_steps) return 0.0;
        return s.lr0 * (1.0 - static_cast<double>(step) / static_cast<double>(s.total_steps));
    }
    double lr = s.lr0;
    for (std::int64_t m : s.milestones)
        if (step >= m) lr /= s.factor;
    return lr;
}

void OptimState::step(std::vector<ParamRefT<float>>& params) {
    if (buffers.empty()) {
        buffers.reserve(params.size());
        for (auto& p : params) buffers.emplace_back(Tensor::zeros(p.var->value().shape()));
    }
    if (buffers.size() != params.size()) throw StateError("optimizer: parameter list changed size");
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.var->has_grad()) continue;
        const Tensor& g = p.var->grad();
        if (g.shape() != p.var->value().shape())
            throw ShapeError("optimizer: gradient shape mismatch for " + p.name);
        if (!g.all_finite())
            throw NumericError("optimizer: non-finite gradient in parameter '" + p.name + "', aborting");
        Tensor& buf = buffers[i];
        Tensor& v = p.var->value_mut();
        const float wd = p.decay ? static_cast<float>(weight_decay) : 0.0f;
        const float m = static_cast<float>(momentum);
        const float step_lr = static_cast<float>(lr);
        for (std::int64_t j = 0; j < v.size(); ++j) {
            buf[j] = m * buf[j] + (g[j] + wd * v[j]);
            v[j] -= step_lr * buf[j];
        }
    }
}

std::string EpochMetrics::line() const {
    return strfmt("epoch=%d lr=%.6g train_loss=%.6f train_top1=%.4f val_loss=%.6f val_top1=%.4f", epoch, lr,
                  train_loss, train_top1, val_loss, val_top1);
}

std::string EpochMetrics::csv_row() const {
    return strfmt("%d,%.6g,%.6f,%.4f,%.6f,%.4f", epoch, lr, train_loss, train_top1, val_loss, val_top1);
}

namespace {

double top1_hits(const Tensor& logits, const std::vector<int>& labels) {
    const Shape s = logits.shape();
    double hits = 0;
    for (std::int64_t n = 0; n < s.n; ++n) {
        const float* row = logits.data() + n * s.c;
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < s.c; ++c)
            if (row[c] > row[best]) best = c;
        if (best == labels[static_cast<size_t>(n)]) hits += 1.0;
    }
    return hits;
}

}  // namespace

EvalResult evaluate(const Network& net, const data::Dataset& ds, int batch_size) {
    if (ds.size() == 0) return {};
    if (ds.num_classes != static_cast<int>(net.meta.num_classes))
        throw ConfigError(strfmt("evaluate: dataset has %d classes but the model emits %lld", ds.num_classes,
                                 (long long)net.meta.num_classes));
    autograd::NoGradGuard guard;
    double loss_sum = 0.0, hits = 0.0;
    std::vector<int> labels;
    for (std::int64_t start = 0; start < ds.size(); start += batch_size) {
        const std::int64_t end = std::min<std::int64_t>(start + batch_size, ds.size());
        std::vector<std::int64_t> idx(static_cast<size_t>(end - start));
        std::iota(idx.begin(), idx.end(), start);
        Tensor batch;
        {
            // evaluation never augments
            data::Dataset view = ds;
            view.augment = false;
            batch = data::gather_batch(view, idx, nullptr, &labels);
        }
        Tensor logits = net.infer(batch);
        Var loss = ops::softmax_cross_entropy(Var(logits), labels);
        loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(end - start);
        hits += top1_hits(logits, labels);
    }
    return {loss_sum / static_cast<double>(ds.size()), hits / static_cast<double>(ds.size())};
}

std::vector<EpochMetrics> train_epochs(Network& net, const data::Dataset& train, const data::Dataset& test,
                                       const TrainConfig& cfg) {
    if (train.size() == 0) throw ConfigError("train_epochs: empty training set");
    if (train.num_classes != static_cast<int>(net.meta.num_classes))
        throw ConfigError(strfmt("train_epochs: dataset has %d classes but the model emits %lld", train.num_classes,
                                 (long long)net.meta.num_classes));

    Rng shuffle_rng(cfg.seed ^ 0x5137a11ce5ULL);
    Rng augment_rng(cfg.seed ^ 0xa462e57ULL);
    Rng dropout_rng(cfg.seed ^ 0xd407c0deULL);

    OptimState opt;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;
    auto params = net.params();

    std::ofstream csv;
    if (!cfg.metrics_csv.empty()) {
        csv.open(cfg.metrics_csv, std::ios::trunc);
        if (!csv) throw IoError("cannot open metrics csv: " + cfg.metrics_csv);
        csv << kMetricsCsvHeader << "\n";
    }

    const std::int64_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::vector<EpochMetrics> history;
    std::vector<std::int64_t> order(static_cast<size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);
    std::int64_t global_step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        net.mode = Mode::Train;
        // Fisher-Yates with the epoch stream
        for (std::int64_t i = train.size() - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.below(static_cast<std::uint64_t>(i + 1)))]);

        double loss_sum = 0.0, hits = 0.0;
        double lr_last = 0.0;
        std::vector<int> labels;
        for (std::int64_t start = 0; start < train.size(); start += cfg.batch_size, ++global_step) {
            const std::int64_t end = std::min<std::int64_t>(start + cfg.batch_size, train.size());
            std::vector<std::int64_t> idx(order.begin() + start, order.begin() + end);
            Tensor batch = data::gather_batch(train, idx, &augment_rng, &labels);

            opt.lr = cfg.schedule.kind == Schedule::Kind::LinearDecay ? schedule_lr(cfg.schedule, global_step)
                                                                      : schedule_lr(cfg.schedule, epoch);
            lr_last = opt.lr;

            net.zero_grads();
            Var logits = net.forward(Var(batch), &dropout_rng);
            Var loss = ops::softmax_cross_entropy(logits, labels);
            const double loss_v = static_cast<double>(loss.value()[0]);
            if (!std::isfinite(loss_v)) throw NumericError(strfmt("train: non-finite loss at epoch %d", epoch));
            backward(loss);
            opt.step(params);

            loss_sum += loss_v * static_cast<double>(end - start);
            hits += top1_hits(logits.value(), labels);
        }

        net.mode = Mode::Infer;
        EvalResult ev = evaluate(net, test, cfg.batch_size);
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr_last;
        m.train_loss = loss_sum / static_cast<double>(train.size());
        m.train_top1 = hits / static_cast<double>(train.size());
        m.val_loss = ev.loss;
        m.val_top1 = ev.top1;
        history.push_back(m);
        if (cfg.verbose) std::printf("%s\n", m.line().c_str());
        if (csv.is_open()) csv << m.csv_row() << "\n";
    }
    net.mode = Mode::Infer;
    return history;
}

}  // namespace fg
