#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "cgcce/data_pipeline.hpp"
#include "cgcce/image_io.hpp"
#include "cgcce/train_eval.hpp"

namespace cgcce::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kReferenceParamsM = 56.67;
constexpr double kReferenceFlopsG = 17.57;

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// ---- shared flag groups -------------------------------------------------------

struct ModelFlags {
    std::string config_path;
    std::string preset = "toy";
    std::vector<int> stage_channels, stage_depths, attn_heads, sra_reduction, scem_kernels;
    bool enable_gccm = true, enable_cgrr = true, enable_scem = true, enable_cfd = true;
    int tile_size = 0;
    double threshold = 0.0;
    std::map<std::string, CLI::Option*> opts;
};

void add_model_flags(CLI::App* app, ModelFlags& f) {
    app->add_option("--config", f.config_path, "model config JSON")->check(CLI::ExistingFile);
    app->add_option("--preset", f.preset, "defaults before the config file: toy or full")
        ->check(CLI::IsMember({"toy", "full"}));
    f.opts["stage_channels"] = app->add_option("--stage-channels", f.stage_channels)->expected(4);
    f.opts["stage_depths"] = app->add_option("--stage-depths", f.stage_depths)->expected(4);
    f.opts["attn_heads"] = app->add_option("--attn-heads", f.attn_heads)->expected(4);
    f.opts["sra_reduction"] = app->add_option("--sra-reduction", f.sra_reduction)->expected(4);
    f.opts["scem_kernels"] = app->add_option("--scem-kernels", f.scem_kernels)->expected(1, 16);
    f.opts["enable_gccm"] = app->add_option("--enable-gccm", f.enable_gccm);
    f.opts["enable_cgrr"] = app->add_option("--enable-cgrr", f.enable_cgrr);
    f.opts["enable_scem"] = app->add_option("--enable-scem", f.enable_scem);
    f.opts["enable_cfd"] = app->add_option("--enable-cfd", f.enable_cfd);
    f.opts["tile_size"] = app->add_option("--tile-size", f.tile_size);
    f.opts["threshold"] = app->add_option("--threshold", f.threshold);
}

/// flag > config file > preset.
ModelConfig resolve_model(const ModelFlags& f) {
    ModelConfig cfg = f.preset == "full" ? ModelConfig::full() : ModelConfig::toy();
    if (!f.config_path.empty()) {
        std::ifstream in(f.config_path);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw UsageError("cannot parse " + f.config_path + ": " + e.what());
        }
        json merged = cfg;
        for (const auto& [k, v] : j.items()) merged[k] = v;
        try {
            cfg = merged.get<ModelConfig>();
        } catch (const json::exception& e) {
            throw UsageError(f.config_path + ": " + e.what());
        }
    }
    const auto given = [&](const char* name) { return f.opts.at(name)->count() > 0; };
    const auto copy4 = [](const std::vector<int>& v, std::array<int, kNumScales>& dst) {
        std::copy(v.begin(), v.end(), dst.begin());
    };
    if (given("stage_channels")) copy4(f.stage_channels, cfg.stage_channels);
    if (given("stage_depths")) copy4(f.stage_depths, cfg.stage_depths);
    if (given("attn_heads")) copy4(f.attn_heads, cfg.attn_heads);
    if (given("sra_reduction")) copy4(f.sra_reduction, cfg.sra_reduction);
    if (given("scem_kernels")) cfg.scem_kernels = f.scem_kernels;
    if (given("enable_gccm")) cfg.enable_gccm = f.enable_gccm;
    if (given("enable_cgrr")) cfg.enable_cgrr = f.enable_cgrr;
    if (given("enable_scem")) cfg.enable_scem = f.enable_scem;
    if (given("enable_cfd")) cfg.enable_cfd = f.enable_cfd;
    if (given("tile_size")) cfg.tile_size = f.tile_size;
    if (given("threshold")) cfg.threshold = f.threshold;
    return validate_config(cfg);
}

struct TrainFlags {
    int epochs = 300;
    int batch = 8;
    std::uint64_t seed = 0;
    double lr0 = 5e-4;
    double lr_min = -1.0;
    double weight_decay = 0.01;
};

void add_train_flags(CLI::App* app, TrainFlags& f) {
    app->add_option("--epochs", f.epochs)->check(CLI::PositiveNumber);
    app->add_option("--batch", f.batch)->check(CLI::PositiveNumber);
    app->add_option("--lr0", f.lr0)->check(CLI::PositiveNumber);
    app->add_option("--lr-min", f.lr_min, "default lr0/100");
    app->add_option("--weight-decay", f.weight_decay)->check(CLI::NonNegativeNumber);
}

TrainOptions to_options(const TrainFlags& f) {
    TrainOptions o;
    o.epochs = f.epochs;
    o.batch = f.batch;
    o.seed = f.seed;
    o.lr0 = f.lr0;
    o.lr_min = f.lr_min;
    o.adamw.weight_decay = f.weight_decay;
    return o;
}

std::array<double, 3> parse_ratios(const std::string& text) {
    std::array<double, 3> r{};
    std::stringstream ss(text);
    std::string part;
    int i = 0;
    while (std::getline(ss, part, ':')) {
        if (i == 3) break;
        try {
            r[static_cast<std::size_t>(i)] = std::stod(part);
        } catch (const std::exception&) {
            throw UsageError("ratios must look like 7:2:1, got '" + text + "'");
        }
        ++i;
    }
    if (i != 3 || std::getline(ss, part, ':') || std::any_of(r.begin(), r.end(), [](double v) { return !(v > 0); })) {
        throw UsageError("ratios must be three positive numbers like 7:2:1, got '" + text + "'");
    }
    return r;
}

DatasetManifest open_dataset(const std::string& dir, int tile_size) {
    DatasetManifest m = load_manifest(dir);
    if (m.tile_size != tile_size) {
        throw UsageError("dataset tiles are " + std::to_string(m.tile_size) + " px but the model expects " +
                         std::to_string(tile_size) + " (set --tile-size)");
    }
    check_manifest(m);
    return m;
}

void print_resolved(std::ostream& out, const json& config, std::uint64_t seed) {
    out << "config " << config.dump() << "\nseed " << seed << "\n";
}

// ---- subcommands ---------------------------------------------------------------

struct SynthFlags {
    std::string out, spec_path, ratios = "7:2:1";
    SynthSpec spec;
};

int run_synth(SynthFlags& f, CLI::App* app, std::ostream& out) {
    SynthSpec spec;
    if (!f.spec_path.empty()) {
        std::ifstream in(f.spec_path);
        try {
            spec = json::parse(in).get<SynthSpec>();
        } catch (const std::exception& e) {
            throw UsageError(f.spec_path + ": " + e.what());
        }
    }
    const auto given = [&](const char* name) { return app->get_option(name)->count() > 0; };
    if (given("--n")) spec.n_samples = f.spec.n_samples;
    if (given("--seed")) spec.seed = f.spec.seed;
    if (given("--special-ratio")) spec.special_ratio = f.spec.special_ratio;
    if (given("--tile-size")) spec.tile_size = f.spec.tile_size;
    if (given("--jitter")) spec.jitter = f.spec.jitter;
    if (given("--min-buildings")) spec.min_buildings = f.spec.min_buildings;
    if (given("--max-buildings")) spec.max_buildings = f.spec.max_buildings;
    if (given("--change-prob")) spec.change_prob = f.spec.change_prob;
    if (given("--l-shape-prob")) spec.l_shape_prob = f.spec.l_shape_prob;
    if (given("--grid")) spec.grid = f.spec.grid;
    if (given("--ratios")) spec.ratios = parse_ratios(f.ratios);
    try {
        validate_synth_spec(spec);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    print_resolved(out, spec, spec.seed);
    const DatasetManifest m = synth_generate(spec, f.out);
    out << "wrote " << spec.n_samples << " samples to " << f.out << " (train " << m.splits[0].size() << ", val "
        << m.splits[1].size() << ", test " << m.splits[2].size() << ")\n";
    return 0;
}

struct TileFlags {
    std::string a, b, label, out, id, mode = "grid";
    int size = 256;
    int count = 16;
    std::uint64_t seed = 0;
};

int run_tile(const TileFlags& f, std::ostream& out) {
    const TileMode mode = parse_tile_mode(f.mode);
    ScenePair scene{read_png(f.a, 3), read_png(f.b, 3), read_png(f.label, 1),
                    f.id.empty() ? fs::path(f.a).stem().string() : f.id};
    print_resolved(out, json{{"size", f.size}, {"mode", f.mode}, {"count", f.count}, {"id", scene.id}}, f.seed);
    const auto tiles = tile_images(scene, f.size, mode, f.count, f.seed);
    for (const Tile& t : tiles) write_sample(f.out, "all", t.id, t.a, t.b, t.label);
    out << "wrote " << tiles.size() << " tiles to " << (fs::path(f.out) / "all").string() << "\n";
    return 0;
}

struct SplitFlags {
    std::string in, ratios = "7:2:1";
    std::uint64_t seed = 0;
};

int run_split(const SplitFlags& f, std::ostream& out) {
    const auto ratios = parse_ratios(f.ratios);
    const fs::path pool = fs::path(f.in) / "all";
    if (!fs::is_directory(pool / "A")) throw UsageError(pool.string() + "/A does not exist (run tile first)");
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(pool / "A")) {
        if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw UsageError(pool.string() + "/A holds no tiles");
    print_resolved(out, json{{"ratios", ratios}, {"ids", ids.size()}}, f.seed);
    DatasetManifest m = split(ids, ratios, f.seed);
    m.root = f.in;
    m.tile_size = static_cast<int>(read_png((pool / "A" / (ids[0] + ".png")).string(), 3).height);
    for (std::size_t s = 0; s < 3; ++s) {
        for (const char* kind : {"A", "B", "label"}) {
            fs::create_directories(fs::path(f.in) / kSplitNames[s] / kind);
            for (const std::string& id : m.splits[s]) {
                fs::copy_file(pool / kind / (id + ".png"), sample_path(f.in, kSplitNames[s], kind, id),
                              fs::copy_options::overwrite_existing);
            }
        }
    }
    save_manifest(m);
    check_manifest(m);
    out << "train " << m.splits[0].size() << ", val " << m.splits[1].size() << ", test " << m.splits[2].size() << "\n";
    return 0;
}

struct TrainCmd {
    ModelFlags model;
    TrainFlags train;
    std::string data, out;
};

int run_train(const TrainCmd& c, std::ostream& out) {
    const ModelConfig cfg = resolve_model(c.model);
    const DatasetManifest m = open_dataset(c.data, cfg.tile_size);
    TrainOptions opts = to_options(c.train);
    fs::create_directories(c.out);
    opts.checkpoint_path = (fs::path(c.out) / "best.ckpt").string();
    opts.history_path = (fs::path(c.out) / "history.csv").string();
    opts.on_epoch = [&out](const EpochRecord& r) { out << history_csv_row(r) << "\n" << std::flush; };
    print_resolved(out, cfg, opts.seed);
    out << history_csv_header() << "\n";
    const TrainResult r = train(cfg, m, opts);
    out << "best epoch " << r.best_epoch << " val f1 " << r.best_f1 << ", checkpoint " << opts.checkpoint_path << "\n";
    return 0;
}

struct EvalCmd {
    std::string ckpt, data, split = "test", out;
    int shards = 1;
};

int run_eval(const EvalCmd& c, std::ostream& out) {
    split_index(c.split);
    const Checkpoint ckpt = load_checkpoint(c.ckpt);
    const DatasetManifest m = open_dataset(c.data, ckpt.config.tile_size);
    print_resolved(out, ckpt.config, ckpt.state.value("seed", std::uint64_t{0}));
    const MetricReport r = evaluate(ckpt, m, c.split, c.shards);
    out << metric_csv_header() << "\n" << metric_csv_row(c.split, r) << "\n";
    if (!c.out.empty()) {
        std::ofstream f(c.out);
        if (!f) throw IoError("cannot write " + c.out);
        f << metric_csv_header() << "\n" << metric_csv_row(c.split, r) << "\n";
    }
    return 0;
}

struct PredictCmd {
    std::string ckpt, a, b, out, gt, overlay;
};

/// White: hit, black: correct rejection, red: spurious, green: missed.
Image8 disagreement_overlay(const BinaryMask& pred, const BinaryMask& gt) {
    Image8 img(pred.height, pred.width, 3);
    for (std::int64_t y = 0; y < pred.height; ++y) {
        for (std::int64_t x = 0; x < pred.width; ++x) {
            const int p = pred.at(y, x), g = gt.at(y, x);
            std::uint8_t rgb[3] = {0, 0, 0};
            if (p && g) rgb[0] = rgb[1] = rgb[2] = 255;
            else if (p) rgb[0] = 255;
            else if (g) rgb[1] = 255;
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = rgb[ch];
        }
    }
    return img;
}

int run_predict(const PredictCmd& c, std::ostream& out) {
    if (!c.overlay.empty() && c.gt.empty()) throw UsageError("--overlay needs --gt");
    const Checkpoint ckpt = load_checkpoint(c.ckpt);
    const CgcceNet net = restore_network(ckpt);
    BiTemporalSample s{to_tensor(read_png(c.a, 3)), to_tensor(read_png(c.b, 3)), {}, fs::path(c.a).stem().string()};
    s.mask = BinaryMask(s.image_t1.dim(1), s.image_t1.dim(2));
    print_resolved(out, ckpt.config, ckpt.state.value("seed", std::uint64_t{0}));
    const BinaryMask pred = threshold_logits(full_forward(s, net), ckpt.config.threshold);
    write_png(c.out, from_mask(pred));
    out << "mask written to " << c.out << "\n";
    if (!c.gt.empty()) {
        const BinaryMask gt = to_mask(read_png(c.gt, 1));
        const MetricReport r = metrics(confusion(pred, gt));
        out << metric_csv_header() << "\n" << metric_csv_row(s.id, r) << "\n";
        if (!c.overlay.empty()) {
            write_png(c.overlay, disagreement_overlay(pred, gt));
            out << "overlay written to " << c.overlay << "\n";
        }
    }
    return 0;
}

struct AblateCmd {
    ModelFlags model;
    TrainFlags train;
    std::string data, split = "val", out;
    std::vector<std::uint64_t> seeds{0, 1, 2};
};

int run_ablate(const AblateCmd& c, std::ostream& out) {
    const ModelConfig cfg = resolve_model(c.model);
    split_index(c.split);
    const DatasetManifest m = open_dataset(c.data, cfg.tile_size);
    AblationOptions opts;
    opts.train = to_options(c.train);
    opts.split = c.split;
    opts.on_row = [&out](const AblationRow& r) {
        out << "run " << r.variant << " seed " << r.seed << " f1 " << r.f1 << " iou " << r.iou << "\n" << std::flush;
    };
    json resolved = cfg;
    resolved["seeds"] = c.seeds;
    print_resolved(out, resolved, c.seeds.front());
    const std::string table = ablation_csv(ablate(cfg, m, c.seeds, opts));
    out << table;
    if (!c.out.empty()) {
        std::ofstream f(c.out);
        if (!f) throw IoError("cannot write " + c.out);
        f << table;
    }
    return 0;
}

int run_info(const ModelFlags& f, std::ostream& out) {
    const ModelConfig cfg = resolve_model(f);
    print_resolved(out, cfg, 0);
    const ModelCost cost = count_params_flops(cfg);
    out << std::fixed << std::setprecision(2);
    out << "params_m " << cost.params_m() << "\n";
    out << "flops_g " << cost.flops_g() << "  (one 3x256x256 pair)\n";
    out << "reference params_m " << kReferenceParamsM << " flops_g " << kReferenceFlopsG
        << " (published figures, layer widths not given)\n";
    return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"CGCCE-Net building change detection"};
    app.name("cgcce");
    app.require_subcommand(1);

    SynthFlags synth;
    auto* c_synth = app.add_subcommand("synth", "render a synthetic bi-temporal dataset");
    c_synth->add_option("--out", synth.out, "dataset directory")->required();
    c_synth->add_option("--spec", synth.spec_path, "generator spec JSON")->check(CLI::ExistingFile);
    c_synth->add_option("--n", synth.spec.n_samples);
    c_synth->add_option("--seed", synth.spec.seed);
    c_synth->add_option("--special-ratio", synth.spec.special_ratio);
    c_synth->add_option("--tile-size", synth.spec.tile_size);
    c_synth->add_option("--jitter", synth.spec.jitter);
    c_synth->add_option("--min-buildings", synth.spec.min_buildings);
    c_synth->add_option("--max-buildings", synth.spec.max_buildings);
    c_synth->add_option("--change-prob", synth.spec.change_prob);
    c_synth->add_option("--l-shape-prob", synth.spec.l_shape_prob);
    c_synth->add_option("--grid", synth.spec.grid);
    c_synth->add_option("--ratios", synth.ratios, "train:val:test");

    TileFlags tilef;
    auto* c_tile = app.add_subcommand("tile", "cut a large A/B/label triple into tiles under <out>/all");
    c_tile->add_option("--a", tilef.a)->required()->check(CLI::ExistingFile);
    c_tile->add_option("--b", tilef.b)->required()->check(CLI::ExistingFile);
    c_tile->add_option("--label", tilef.label)->required()->check(CLI::ExistingFile);
    c_tile->add_option("--out", tilef.out)->required();
    c_tile->add_option("--id", tilef.id, "tile id prefix (default: stem of --a)");
    c_tile->add_option("--size", tilef.size)->check(CLI::PositiveNumber);
    c_tile->add_option("--mode", tilef.mode)->check(CLI::IsMember({"grid", "random"}));
    c_tile->add_option("--count", tilef.count, "crops in random mode")->check(CLI::PositiveNumber);
    c_tile->add_option("--seed", tilef.seed);

    SplitFlags splitf;
    auto* c_split = app.add_subcommand("split", "partition <in>/all into train/val/test and write the manifest");
    c_split->add_option("--in", splitf.in)->required()->check(CLI::ExistingDirectory);
    c_split->add_option("--ratios", splitf.ratios, "train:val:test");
    c_split->add_option("--seed", splitf.seed);

    TrainCmd trainc;
    auto* c_train = app.add_subcommand("train", "train and keep the best-F1 checkpoint");
    add_model_flags(c_train, trainc.model);
    add_train_flags(c_train, trainc.train);
    c_train->add_option("--seed", trainc.train.seed);
    c_train->add_option("--data", trainc.data, "dataset directory")->required()->check(CLI::ExistingDirectory);
    c_train->add_option("--out", trainc.out, "run directory")->required();

    EvalCmd evalc;
    auto* c_eval = app.add_subcommand("eval", "metrics of a checkpoint on one split");
    c_eval->add_option("--ckpt", evalc.ckpt)->required()->check(CLI::ExistingFile);
    c_eval->add_option("--data", evalc.data)->required()->check(CLI::ExistingDirectory);
    c_eval->add_option("--split", evalc.split)->check(CLI::IsMember({"train", "val", "test"}));
    c_eval->add_option("--shards", evalc.shards)->check(CLI::PositiveNumber);
    c_eval->add_option("--out", evalc.out, "CSV file");

    PredictCmd predc;
    auto* c_pred = app.add_subcommand("predict", "change mask for one image pair");
    c_pred->add_option("--ckpt", predc.ckpt)->required()->check(CLI::ExistingFile);
    c_pred->add_option("--a", predc.a)->required()->check(CLI::ExistingFile);
    c_pred->add_option("--b", predc.b)->required()->check(CLI::ExistingFile);
    c_pred->add_option("--out", predc.out, "mask PNG")->required();
    c_pred->add_option("--gt", predc.gt, "ground-truth mask")->check(CLI::ExistingFile);
    c_pred->add_option("--overlay", predc.overlay, "red/green disagreement PNG");

    AblateCmd ablc;
    auto* c_abl = app.add_subcommand("ablate", "full model and four single-module ablations");
    add_model_flags(c_abl, ablc.model);
    add_train_flags(c_abl, ablc.train);
    c_abl->add_option("--data", ablc.data)->required()->check(CLI::ExistingDirectory);
    c_abl->add_option("--seeds", ablc.seeds)->expected(1, 64);
    c_abl->add_option("--split", ablc.split)->check(CLI::IsMember({"train", "val", "test"}));
    c_abl->add_option("--out", ablc.out, "CSV file");

    ModelFlags infof;
    auto* c_info = app.add_subcommand("info", "parameter count and FLOPs");
    add_model_flags(c_info, infof);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return 0;
        }
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*c_synth) return run_synth(synth, c_synth, out);
        if (*c_tile) return run_tile(tilef, out);
        if (*c_split) return run_split(splitf, out);
        if (*c_train) return run_train(trainc, out);
        if (*c_eval) return run_eval(evalc, out);
        if (*c_pred) return run_predict(predc, out);
        if (*c_abl) return run_ablate(ablc, out);
        if (*c_info) return run_info(infof, out);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    err << app.help();
    return 2;
}

}  // namespace cgcce::cli
