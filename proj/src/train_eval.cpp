#include "cgcce/train_eval.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "cgcce/ops.hpp"

namespace cgcce {

using nlohmann::json;

double cosine_lr(int epoch, int total, double lr0, double lr_min) {
    if (total < 2) throw std::invalid_argument("cosine_lr: total must be at least 2, got " + std::to_string(total));
    if (epoch < 0 || epoch >= total) {
        throw std::out_of_range("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total) +
                                ")");
    }
    constexpr double kPi = 3.14159265358979323846;
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(kPi * epoch / (total - 1)));
}

AdamW::AdamW(std::vector<Var> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
    for (const Var& p : params_) {
        m_.emplace_back(p.shape());
        v_.emplace_back(p.shape());
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Var& p = params_[i];
        Tensor& w = p.mutable_value();
        const Tensor& g = p.grad();
        double* m = m_[i].data();
        double* v = v_[i].data();
        const std::int64_t n = w.numel();
        const bool has_grad = !g.empty();
        for (std::int64_t k = 0; k < n; ++k) {
            const double gk = has_grad ? g[k] : 0.0;
            w[k] -= lr * opts_.weight_decay * w[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + opts_.eps);
        }
    }
}

std::string history_csv_header() { return "epoch,train_loss,val_f1,val_iou,lr"; }

std::string history_csv_row(const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g", r.epoch, r.train_loss, r.val_f1, r.val_iou, r.lr);
    return buf;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << history_csv_header() << "\n";
    for (const auto& r : history) out << history_csv_row(r) << "\n";
}

namespace {

Tensor stack_targets(std::span<const BiTemporalSample* const> samples) {
    const BinaryMask& m0 = samples.front()->mask;
    const auto n = static_cast<std::int64_t>(samples.size());
    Tensor t({n, 1, m0.height, m0.width});
    const std::int64_t per = m0.height * m0.width;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& vals = samples[static_cast<std::size_t>(i)]->mask.values;
        for (std::int64_t k = 0; k < per; ++k) t[i * per + k] = vals[static_cast<std::size_t>(k)];
    }
    return t;
}

std::vector<Var> trainable(const nn::ParameterStore& store) {
    std::vector<Var> out;
    for (const auto& [name, v] : store.entries()) out.push_back(v);
    return out;
}

std::vector<Tensor> snapshot(const nn::ParameterStore& store) {
    std::vector<Tensor> out;
    for (const auto& [name, v] : store.entries()) out.push_back(v.value());
    return out;
}

}  // namespace

TrainResult train(const ModelConfig& cfg, const std::vector<BiTemporalSample>& train_set,
                  const std::vector<BiTemporalSample>& val_set, const TrainOptions& opts) {
    validate_config(cfg);
    if (train_set.empty()) throw std::invalid_argument("train: empty training split");
    if (val_set.empty()) throw std::invalid_argument("train: empty validation split");
    if (opts.epochs < 1) throw std::invalid_argument("train: epochs must be positive");
    if (opts.batch < 1) throw std::invalid_argument("train: batch must be positive");
    for (const auto& s : train_set) check_sample(s, cfg.tile_size);
    for (const auto& s : val_set) check_sample(s, cfg.tile_size);

    const double lr_min = opts.lr_min < 0 ? opts.lr0 / 100.0 : opts.lr_min;
    CgcceNet net(cfg, opts.seed);
    AdamW optimizer(trainable(net.parameters()), opts.adamw);
    std::mt19937_64 order_rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        const double lr = opts.epochs > 1 ? cosine_lr(epoch, opts.epochs, opts.lr0, lr_min) : opts.lr0;
        std::shuffle(order.begin(), order.end(), order_rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0, b = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch), ++b) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opts.batch));
            std::vector<const BiTemporalSample*> batch;
            for (std::size_t k = start; k < stop; ++k) batch.push_back(&train_set[order[k]]);
            auto [a, bimg] = stack_images(batch);
            Var logits = net.forward(Var(std::move(a)), Var(std::move(bimg)));
            Var loss = bce_loss(logits, stack_targets(batch));
            const double value = loss.value()[0];
            if (!std::isfinite(value)) {
                throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(b));
            }
            loss.backward();
            optimizer.step(lr);
            net.parameters().zero_grad();
            loss_sum += value * static_cast<double>(stop - start);
        }

        const MetricReport val = evaluate(net, val_set, opts.batch);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), val.f1, val.iou, lr};
        result.history.push_back(rec);
        if (val.f1 > result.best_f1) {
            result.best_f1 = val.f1;
            result.best_epoch = epoch;
            result.best_parameters = snapshot(net.parameters());
            if (!opts.checkpoint_path.empty()) {
                std::ostringstream rng_state;
                rng_state << order_rng;
                save_checkpoint(opts.checkpoint_path, net,
                                json{{"epoch", epoch},
                                     {"best_f1", val.f1},
                                     {"val_iou", val.iou},
                                     {"lr", lr},
                                     {"train_loss", rec.train_loss},
                                     {"seed", opts.seed},
                                     {"steps", optimizer.steps()},
                                     {"rng_state", rng_state.str()}});
            }
        }
        if (!opts.history_path.empty()) write_history_csv(opts.history_path, result.history);
        if (opts.on_epoch) opts.on_epoch(rec);
    }
    result.steps = optimizer.steps();
    return result;
}

TrainResult train(const ModelConfig& cfg, const DatasetManifest& manifest, const TrainOptions& opts) {
    return train(cfg, load_split(manifest, "train"), load_split(manifest, "val"), opts);
}

namespace {

constexpr char kMagic[8] = {'C', 'G', 'C', 'C', 'E', 'C', 'K', 'P'};

}  // namespace

void save_checkpoint(const std::string& path, const CgcceNet& net, const json& state) {
    json header;
    header["config"] = net.config();
    header["state"] = state;
    json layout = json::array();
    for (const auto& [name, v] : net.parameters().entries()) layout.push_back({{"name", name}, {"shape", v.shape()}});
    header["parameters"] = layout;
    const std::string text = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp);
        const std::uint32_t version = kCheckpointVersion;
        const std::uint64_t len = text.size();
        out.write(kMagic, sizeof kMagic);
        out.write(reinterpret_cast<const char*>(&version), sizeof version);
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(len));
        for (const auto& [name, v] : net.parameters().entries()) {
            out.write(reinterpret_cast<const char*>(v.value().data()),
                      static_cast<std::streamsize>(v.value().numel() * sizeof(double)));
        }
        if (!out) throw IoError("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move " + tmp + " to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path);
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError(path + " is not a checkpoint");
    if (version != kCheckpointVersion) {
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw IoError(path + ": truncated header");
    Checkpoint ckpt;
    ckpt.version = version;
    try {
        const json header = json::parse(text);
        ckpt.config = header.at("config").get<ModelConfig>();
        ckpt.state = header.at("state");
        for (const json& e : header.at("parameters")) {
            Tensor t(e.at("shape").get<Shape>());
            in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
            if (!in) throw IoError(path + ": truncated parameter data");
            ckpt.parameters.emplace_back(e.at("name").get<std::string>(), std::move(t));
        }
    } catch (const json::exception& e) {
        throw IoError(path + ": malformed header: " + e.what());
    }
    return ckpt;
}

CgcceNet restore_network(const Checkpoint& ckpt) {
    CgcceNet net(ckpt.config, 0);
    const auto& entries = net.parameters().entries();
    if (entries.size() != ckpt.parameters.size()) {
        throw IoError("checkpoint holds " + std::to_string(ckpt.parameters.size()) + " tensors, network expects " +
                      std::to_string(entries.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Var v = entries[i].second;
        if (entries[i].first != ckpt.parameters[i].first || v.shape() != ckpt.parameters[i].second.shape()) {
            throw IoError("checkpoint tensor " + ckpt.parameters[i].first + " does not match " + entries[i].first);
        }
        v.mutable_value() = ckpt.parameters[i].second;
    }
    return net;
}

ConfusionCounts evaluate_counts(const CgcceNet& net, const std::vector<BiTemporalSample>& samples, int batch,
                                int shards) {
    if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
    if (batch < 1 || shards < 1) throw std::invalid_argument("evaluate: batch and shards must be positive");
    const double threshold = net.config().threshold;
    for (const auto& s : samples) check_sample(s, net.config().tile_size);

    const std::size_t n_batches = (samples.size() + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch);
    const auto run = [&](std::size_t first_batch, std::size_t last_batch) {
        NoGradGuard guard;
        ConfusionCounts counts;
        for (std::size_t bi = first_batch; bi < last_batch; ++bi) {
            const std::size_t start = bi * static_cast<std::size_t>(batch);
            const std::size_t stop = std::min(samples.size(), start + static_cast<std::size_t>(batch));
            std::vector<const BiTemporalSample*> group;
            for (std::size_t k = start; k < stop; ++k) group.push_back(&samples[k]);
            auto [a, b] = stack_images(group);
            const Tensor logits = net.forward(Var(std::move(a)), Var(std::move(b))).value();
            const std::int64_t h = logits.dim(2), w = logits.dim(3);
            for (std::size_t k = 0; k < group.size(); ++k) {
                Tensor one({1, h, w});
                std::copy_n(logits.data() + static_cast<std::int64_t>(k) * h * w, h * w, one.data());
                counts += confusion(threshold_logits(one, threshold), group[k]->mask);
            }
        }
        return counts;
    };

    const std::size_t n_shards = std::min<std::size_t>(static_cast<std::size_t>(shards), n_batches);
    if (n_shards == 1) return run(0, n_batches);
    std::vector<ConfusionCounts> partial(n_shards);
    std::vector<std::thread> workers;
    for (std::size_t s = 0; s < n_shards; ++s) {
        const std::size_t lo = n_batches * s / n_shards, hi = n_batches * (s + 1) / n_shards;
        workers.emplace_back([&, s, lo, hi] { partial[s] = run(lo, hi); });
    }
    for (auto& t : workers) t.join();
    ConfusionCounts total;
    for (const auto& c : partial) total += c;
    return total;
}

MetricReport evaluate(const CgcceNet& net, const std::vector<BiTemporalSample>& samples, int batch, int shards) {
    return metrics(evaluate_counts(net, samples, batch, shards));
}

MetricReport evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest, const std::string& split, int shards) {
    const auto samples = load_split(manifest, split);
    if (samples.empty()) throw std::invalid_argument("evaluate: split " + split + " is empty");
    return evaluate(restore_network(ckpt), samples, 8, shards);
}

const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> v{"full", "no_gccm", "no_cgrr", "no_scem", "no_cfd"};
    return v;
}

ModelConfig ablation_config(const ModelConfig& base, const std::string& variant) {
    ModelConfig cfg = base;
    cfg.enable_gccm = cfg.enable_cgrr = cfg.enable_scem = cfg.enable_cfd = true;
    if (variant == "no_gccm") cfg.enable_gccm = false;
    else if (variant == "no_cgrr") cfg.enable_cgrr = false;
    else if (variant == "no_scem") cfg.enable_scem = false;
    else if (variant == "no_cfd") cfg.enable_cfd = false;
    else if (variant != "full") throw std::invalid_argument("unknown ablation variant '" + variant + "'");
    return cfg;
}

std::vector<AblationRow> ablate(const ModelConfig& cfg, const std::vector<BiTemporalSample>& train_set,
                                const std::vector<BiTemporalSample>& val_set,
                                const std::vector<BiTemporalSample>& eval_set, const std::vector<std::uint64_t>& seeds,
                                const AblationOptions& opts) {
    if (seeds.empty()) throw std::invalid_argument("ablate: at least one seed is required");
    std::vector<AblationRow> rows;
    for (std::uint64_t seed : seeds) {
        for (const std::string& variant : ablation_variants()) {
            const ModelConfig vcfg = ablation_config(cfg, variant);
            TrainOptions topts = opts.train;
            topts.seed = seed;
            topts.checkpoint_path.clear();
            topts.history_path.clear();
            try {
                TrainResult res = train(vcfg, train_set, val_set, topts);
                CgcceNet net(vcfg, seed);
                const auto& entries = net.parameters().entries();
                for (std::size_t i = 0; i < entries.size(); ++i) {
                    Var v = entries[i].second;
                    v.mutable_value() = res.best_parameters[i];
                }
                const MetricReport r = evaluate(net, eval_set, topts.batch);
                rows.push_back({variant, seed, r.f1, r.iou});
            } catch (const std::exception& e) {
                throw TrainingError("ablate: variant " + variant + ", seed " + std::to_string(seed) + ": " + e.what());
            }
            if (opts.on_row) opts.on_row(rows.back());
        }
    }
    return rows;
}

std::vector<AblationRow> ablate(const ModelConfig& cfg, const DatasetManifest& manifest,
                                const std::vector<std::uint64_t>& seeds, const AblationOptions& opts) {
    const auto train_set = load_split(manifest, "train");
    const auto val_set = load_split(manifest, "val");
    const auto eval_set = opts.split == "val" ? val_set : load_split(manifest, opts.split);
    return ablate(cfg, train_set, val_set, eval_set, seeds, opts);
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "variant,seed,f1,iou\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%llu,%.6f,%.6f\n", r.variant.c_str(), static_cast<unsigned long long>(r.seed),
                      r.f1, r.iou);
        out += buf;
    }
    for (const std::string& variant : ablation_variants()) {
        double f1 = 0.0, iou = 0.0;
        int n = 0;
        for (const auto& r : rows) {
            if (r.variant != variant) continue;
            f1 += r.f1;
            iou += r.iou;
            ++n;
        }
        if (n == 0) continue;
        std::snprintf(buf, sizeof buf, "%s,mean,%.6f,%.6f\n", variant.c_str(), f1 / n, iou / n);
        out += buf;
    }
    return out;
}

ModelCost count_params_flops(const ModelConfig& cfg) {
    ModelConfig c = cfg;
    c.tile_size = 256;
    CgcceNet net(validate_config(c), 0);
    ModelCost cost;
    cost.params = net.parameters().count();
    NoGradGuard guard;
    FlopCounter counter(true);
    Var x(Tensor({1, 3, 256, 256}));
    (void)net.forward(x, x);
    cost.flops = counter.flops();
    return cost;
}

}  // namespace cgcce
