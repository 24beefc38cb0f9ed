#include "ssmtl/trainer.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ssmtl/loss.hpp"

namespace ssmtl {

double lr_at_epoch(int epoch, double lr0, double decay_factor, int decay_every) {
    if (epoch < 0) throw ad::UsageError("lr_at_epoch: epoch must be >= 0");
    if (decay_every < 1) throw ad::ConfigError("lr_at_epoch: decay_every must be >= 1");
    const int k = epoch / decay_every;
    if (k == 0) return lr0;
    // Dividing by an integral reciprocal keeps 0.01 -> 0.001 -> 0.0001 exact.
    const double inv = 1.0 / decay_factor;
    if (decay_factor < 1.0 && std::abs(inv - std::round(inv)) < 1e-9)
        return lr0 / std::pow(std::round(inv), k);
    return lr0 * std::pow(decay_factor, k);
}

// ============================================================================
// Adam
// ============================================================================

void adam_step(std::span<ad::Tensor> params, AdamState& state, double lr, const AdamOptions& o) {
    if (state.m.size() != params.size()) {
        if (!state.m.empty() || state.step != 0) throw ad::UsageError("adam_step: state does not match parameters");
        for (const auto& p : params) {
            state.m.emplace_back(p.numel(), 0.0);
            state.v.emplace_back(p.numel(), 0.0);
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(o.beta1, t);
    const double bc2 = 1.0 - std::pow(o.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.numel()) throw ad::UsageError("adam_step: state shape mismatch");
        const auto g = std::as_const(p).grad();
        auto w = p.data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g.empty() ? 0.0 : g[j];
            m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
            v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + o.eps);
        }
    }
}

// ============================================================================
// TrainLog
// ============================================================================

namespace {

std::string num(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

void join(std::ostream& os, const std::vector<double>& v, std::size_t i) {
    os << ',' << (i < v.size() ? num(v[i]) : std::string());
}

}  // namespace

std::string TrainLog::csv() const {
    std::ostringstream os;
    os << "epoch,lr,train_loss";
    for (const auto& t : tasks)
        os << ",loss_" << t << ",train_acc_" << t << ",val_acc_" << t << ",s_" << t << ",sigma_" << t << ",inv_sigma_"
           << t;
    os << '\n';
    for (const auto& r : records) {
        os << r.epoch << ',' << num(r.lr) << ',' << num(r.train_loss);
        for (std::size_t t = 0; t < tasks.size(); ++t) {
            join(os, r.task_loss, t);
            join(os, r.train_acc, t);
            join(os, r.val_acc, t);
            join(os, r.s, t);
            join(os, r.sigma, t);
            join(os, r.confidence, t);
        }
        os << '\n';
    }
    return os.str();
}

namespace {

nlohmann::json record_json(const EpochRecord& r, const std::vector<std::string>& tasks) {
    nlohmann::json j = {{"epoch", r.epoch}, {"lr", r.lr}, {"train_loss", r.train_loss}};
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        auto at = [t](const std::vector<double>& v) { return t < v.size() ? nlohmann::json(v[t]) : nlohmann::json(); };
        per[tasks[t]] = {{"loss", at(r.task_loss)}, {"train_acc", at(r.train_acc)}, {"val_acc", at(r.val_acc)},
                         {"s", at(r.s)},           {"sigma", at(r.sigma)},         {"inv_sigma", at(r.confidence)}};
    }
    j["tasks"] = per;
    return j;
}

}  // namespace

std::string TrainLog::jsonl() const {
    std::string out;
    for (const auto& r : records) out += record_json(r, tasks).dump() + "\n";
    return out;
}

std::string TrainLog::timing_csv() const {
    std::ostringstream os;
    os << "epoch,wall_seconds\n";
    for (const auto& r : records) os << r.epoch << ',' << num(r.wall_seconds) << '\n';
    return os.str();
}

nlohmann::json TrainLog::to_json() const {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : records) {
        recs.push_back({{"epoch", r.epoch},
                        {"lr", r.lr},
                        {"train_loss", r.train_loss},
                        {"task_loss", r.task_loss},
                        {"train_acc", r.train_acc},
                        {"val_acc", r.val_acc},
                        {"s", r.s},
                        {"sigma", r.sigma},
                        {"confidence", r.confidence}});
    }
    return {{"tasks", tasks}, {"records", recs}};
}

TrainLog TrainLog::from_json(const nlohmann::json& j) {
    TrainLog log;
    log.tasks = j.at("tasks").get<std::vector<std::string>>();
    for (const auto& r : j.at("records")) {
        EpochRecord e;
        e.epoch = r.at("epoch").get<int>();
        e.lr = r.at("lr").get<double>();
        e.train_loss = r.at("train_loss").get<double>();
        e.task_loss = r.at("task_loss").get<std::vector<double>>();
        e.train_acc = r.at("train_acc").get<std::vector<double>>();
        e.val_acc = r.at("val_acc").get<std::vector<double>>();
        e.s = r.at("s").get<std::vector<double>>();
        e.sigma = r.at("sigma").get<std::vector<double>>();
        e.confidence = r.at("confidence").get<std::vector<double>>();
        log.records.push_back(std::move(e));
    }
    return log;
}

// ============================================================================
// Inference / evaluation
// ============================================================================

namespace {

int argmax_row(std::span<const double> row) {
    int best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
        if (row[c] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
    return best;
}

}  // namespace

InferenceResult infer(MultiTaskModel& model, const Dataset& ds, const std::vector<DistortionSpec>& ssdts,
                      std::uint64_t seed, std::size_t batch_size, bool keep_features) {
    const std::size_t T = model.tasks().size();
    if (T != 1 + ssdts.size()) throw ad::UsageError("infer: model tasks do not match distortion specs");
    InferenceResult res;
    res.predictions.assign(T, {});
    res.labels.assign(T, {});
    BatchIterator it(ds, batch_size, kEvalEpoch, seed, ssdts, model.arch().input_size, false);
    Rng unused(0);
    Batch b;
    while (it.next(b)) {
        ad::Graph g(false);
        auto out = forward(model, g, b.images, false, unused);
        const std::size_t n = b.spt_labels.size();
        for (std::size_t t = 0; t < T; ++t) {
            const auto& logits = out.logits[t];
            const std::size_t C = logits.dim(1);
            for (std::size_t i = 0; i < n; ++i) res.predictions[t].push_back(argmax_row(logits.data().subspan(i * C, C)));
            const auto& lab = t == 0 ? b.spt_labels : b.ssdt_labels[t - 1];
            res.labels[t].insert(res.labels[t].end(), lab.begin(), lab.end());
        }
        if (keep_features) {
            const std::size_t D = out.features.dim(1);
            for (std::size_t i = 0; i < n; ++i) {
                auto row = out.features.data().subspan(i * D, D);
                res.features.emplace_back(row.begin(), row.end());
            }
        }
    }
    return res;
}

const TaskMetrics& EvalResult::task(const std::string& name) const {
    for (const auto& t : tasks)
        if (t.task == name) return t;
    throw ad::UsageError("no metrics for task '" + name + "'");
}

nlohmann::json EvalResult::to_json() const {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& t : tasks) per[t.task] = ssmtl::to_json(t.metrics);
    return {{"n", n}, {"tasks", per}};
}

EvalResult evaluate_predictions(const std::vector<TaskDef>& tasks, const InferenceResult& inf) {
    EvalResult r;
    r.n = inf.labels.empty() ? 0 : inf.labels[0].size();
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        auto cm = confusion_matrix(inf.predictions[t], inf.labels[t], tasks[t].num_classes);
        auto m = per_class_metrics(cm);
        r.tasks.push_back(TaskMetrics{tasks[t].name, std::move(cm), std::move(m)});
    }
    return r;
}

EvalResult evaluate(MultiTaskModel& model, const Dataset& ds, const std::vector<DistortionSpec>& ssdts,
                    std::uint64_t seed, std::size_t batch_size) {
    return evaluate_predictions(model.tasks(), infer(model, ds, ssdts, seed, batch_size, false));
}

// ============================================================================
// Checkpoints
// ============================================================================

namespace {

std::string rng_to_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

Rng rng_from_string(const std::string& s) {
    Rng rng;
    std::istringstream is(s);
    is >> rng;
    if (!is) throw CheckpointError("corrupt RNG state in checkpoint");
    return rng;
}

void load_array(ad::Tensor& dst, const NamedArray& src) {
    if (dst.shape() != src.shape)
        throw CheckpointError("array '" + src.name + "' has shape " + ad::shape_str(src.shape) + ", model expects " +
                              ad::shape_str(dst.shape()));
    std::copy(src.data.begin(), src.data.end(), dst.data().begin());
}

}  // namespace

CheckpointFile make_checkpoint(const ExperimentConfig& config, const MultiTaskModel& model, const AdamState* adam,
                               int epoch, const TrainLog& log, const std::string& rng_state, int best_epoch,
                               double best_val_acc) {
    CheckpointFile ck;
    ck.meta = {{"format", "ssmtl-checkpoint"},
               {"config", config.to_json()},
               {"tasks", log.tasks},
               {"epoch", epoch},
               {"rng", rng_state},
               {"best_epoch", best_epoch},
               {"best_val_acc", best_val_acc},
               {"log", log.to_json()}};
    std::vector<std::string> adam_names;
    for (const auto& [name, t] : model.named_tensors()) {
        auto d = t.data();
        ck.arrays.push_back(NamedArray{name, t.shape(), std::vector<double>(d.begin(), d.end())});
    }
    if (adam) {
        ck.meta["adam_step"] = adam->step;
        const auto named = model.named_tensors();
        for (std::size_t i = 0; i < adam->m.size(); ++i) {
            ck.arrays.push_back(NamedArray{"adam.m." + named[i].name, named[i].tensor.shape(), adam->m[i]});
            ck.arrays.push_back(NamedArray{"adam.v." + named[i].name, named[i].tensor.shape(), adam->v[i]});
        }
    }
    return ck;
}

namespace {

MultiTaskModel model_from_checkpoint(const CheckpointFile& ck, const ExperimentConfig& config) {
    auto model = build_model(config.arch_config(), config.tasks());
    for (auto& [name, t] : model.named_tensors()) load_array(t, ck.array(name));
    return model;
}

}  // namespace

LoadedModel load_model(const std::filesystem::path& path) {
    const auto ck = read_checkpoint(path);
    if (ck.meta.value("format", "") != "ssmtl-checkpoint") throw CheckpointError(path.string() + ": unknown format");
    LoadedModel lm;
    lm.config = ExperimentConfig::from_json(ck.meta.at("config"));
    lm.model = model_from_checkpoint(ck, lm.config);
    lm.epoch = ck.meta.at("epoch").get<int>();
    return lm;
}

// ============================================================================
// Training loop
// ============================================================================

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << text;
}

std::string describe_losses(const std::vector<std::string>& tasks, const std::vector<double>& losses) {
    std::string s;
    for (std::size_t t = 0; t < losses.size(); ++t) s += (t ? ", " : "") + tasks[t] + "=" + num(losses[t]);
    return s.empty() ? "<not computed>" : s;
}

}  // namespace

TrainResult train(const ExperimentConfig& config, const DatasetSplit& data, const TrainOptions& opts) {
    config.validate();
    if (data.train.empty()) throw TrainingError("training split is empty");
    const auto specs = config.ssdt_specs();
    const auto task_defs = config.tasks();
    const auto lambdas = config.resolved_lambdas();
    const bool learn_s = config.loss_mode == LossMode::Uncertainty && !config.freeze_uncertainty;

    TrainResult res;
    res.model = build_model(config.arch_config(), task_defs);
    init_weights(res.model, config.seed);
    for (const auto& t : task_defs) res.log.tasks.push_back(t.name);
    Rng dropout_rng(derive_seed({config.seed, 0xd509}));
    int start_epoch = 0;

    auto named = res.model.named_tensors();
    std::vector<ad::Tensor> trainables;
    for (const auto& [name, t] : named)
        if (learn_s || name.rfind("log_var.", 0) != 0) trainables.push_back(t);

    if (opts.resume_from) {
        const auto ck = read_checkpoint(*opts.resume_from);
        const auto saved = ExperimentConfig::from_json(ck.meta.at("config"));
        if (saved.tasks() != task_defs || saved.arch != config.arch || saved.seed != config.seed)
            throw TrainingError("checkpoint " + opts.resume_from->string() + " does not match this experiment");
        for (auto& [name, t] : named) load_array(t, ck.array(name));
        start_epoch = ck.meta.at("epoch").get<int>();
        dropout_rng = rng_from_string(ck.meta.at("rng").get<std::string>());
        res.log = TrainLog::from_json(ck.meta.at("log"));
        res.best_epoch = ck.meta.at("best_epoch").get<int>();
        res.best_val_acc = ck.meta.at("best_val_acc").get<double>();
        if (ck.meta.contains("adam_step")) {
            res.optimizer.step = ck.meta.at("adam_step").get<std::uint64_t>();
            for (std::size_t i = 0; i < trainables.size(); ++i) {
                res.optimizer.m.push_back(ck.array("adam.m." + named[i].name).data);
                res.optimizer.v.push_back(ck.array("adam.v." + named[i].name).data);
            }
        }
    }

    const auto weights = res.model.weight_tensors();
    const TaskWeights fixed_weights{lambdas, config.alpha};
    const std::size_t T = task_defs.size();

    if (opts.out_dir) std::filesystem::create_directories(*opts.out_dir);
    auto save = [&](const std::filesystem::path& p, int epoch) {
        write_checkpoint(p, make_checkpoint(config, res.model, &res.optimizer, epoch, res.log,
                                            rng_to_string(dropout_rng), res.best_epoch, res.best_val_acc));
    };

    for (int e = start_epoch; e < config.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at_epoch(e, config.lr0, config.decay_factor, config.decay_every);
        BatchIterator it(data.train, static_cast<std::size_t>(config.batch_size), static_cast<std::uint64_t>(e),
                         config.seed, specs, res.model.arch().input_size, true);
        double loss_sum = 0.0;
        std::vector<double> task_sum(T, 0.0), correct(T, 0.0);
        std::size_t seen = 0, batch_no = 0;
        Batch b;
        while (it.next(b)) {
            ++batch_no;
            std::vector<double> losses_now;
            try {
                ad::Graph g;
                auto out = forward(res.model, g, b.images, true, dropout_rng);
                std::vector<ad::Tensor> task_losses;
                for (std::size_t t = 0; t < T; ++t) {
                    const auto& lab = t == 0 ? b.spt_labels : b.ssdt_labels[t - 1];
                    task_losses.push_back(ad::softmax_cross_entropy(g, out.logits[t], lab));
                    losses_now.push_back(task_losses.back().item());
                }
                ad::Tensor total = config.loss_mode == LossMode::Fixed
                                       ? fixed_weight_loss(g, task_losses, fixed_weights, weights)
                                       : uncertainty_loss(g, task_losses, res.model.uncertainty(), config.alpha, weights);
                for (auto& p : named) p.tensor.drop_grad();
                g.backward(total);
                for (const auto& [name, t] : named) {
                    for (double v : std::as_const(t).grad())
                        if (!std::isfinite(v)) throw ad::NonFiniteError("gradient of " + name + " is not finite");
                }
                adam_step(trainables, res.optimizer, lr);
                for (const auto& p : trainables) p.check_finite("parameter update");

                const double n = static_cast<double>(b.spt_labels.size());
                loss_sum += total.item() * n;
                for (std::size_t t = 0; t < T; ++t) {
                    task_sum[t] += losses_now[t] * n;
                    const auto& logits = out.logits[t];
                    const std::size_t C = logits.dim(1);
                    const auto& lab = t == 0 ? b.spt_labels : b.ssdt_labels[t - 1];
                    for (std::size_t i = 0; i < lab.size(); ++i)
                        if (argmax_row(logits.data().subspan(i * C, C)) == lab[i]) correct[t] += 1.0;
                }
                seen += b.spt_labels.size();
            } catch (const ad::NonFiniteError& err) {
                throw TrainingError("training diverged at epoch " + std::to_string(e + 1) + ", batch " +
                                    std::to_string(batch_no) + ": " + err.what() +
                                    "; task losses: " + describe_losses(res.log.tasks, losses_now));
            }
        }
        for (auto& p : named) p.tensor.drop_grad();

        EpochRecord rec;
        rec.epoch = e + 1;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        for (std::size_t t = 0; t < T; ++t) {
            rec.task_loss.push_back(task_sum[t] / static_cast<double>(seen));
            rec.train_acc.push_back(correct[t] / static_cast<double>(seen));
        }
        if (!data.val.empty()) {
            const auto val = evaluate(res.model, data.val, specs, config.seed,
                                      static_cast<std::size_t>(config.batch_size));
            for (const auto& tm : val.tasks) rec.val_acc.push_back(tm.metrics.accuracy.value_or(0.0));
        }
        for (const auto& s : res.model.uncertainty().s) rec.s.push_back(s.item());
        rec.sigma = task_sigma(res.model.uncertainty());
        rec.confidence = task_confidence(res.model.uncertainty());
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.records.push_back(rec);

        const bool improved = !rec.val_acc.empty() && rec.val_acc[0] > res.best_val_acc;
        if (improved) {
            res.best_val_acc = rec.val_acc[0];
            res.best_epoch = rec.epoch;
        }
        if (opts.out_dir) {
            if (improved) save(*opts.out_dir / "checkpoint_best.bin", rec.epoch);
            if (rec.epoch % config.checkpoint_every == 0 || rec.epoch == config.epochs) {
                save(*opts.out_dir / "checkpoint_last.bin", rec.epoch);
                res.checkpoint = *opts.out_dir / "checkpoint_last.bin";
            }
            write_text(*opts.out_dir / "trainlog.csv", res.log.csv());
            write_text(*opts.out_dir / "trainlog.jsonl", res.log.jsonl());
            write_text(*opts.out_dir / "timing.csv", res.log.timing_csv());
        }
        if (opts.on_epoch) opts.on_epoch(rec);
    }
    return res;
}

}  // namespace ssmtl
