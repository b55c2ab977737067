// aggseg: hierarchical agglomeration of oversegmented n-dimensional images.
//
// Subcommands wire the library end to end: synth -> watershed -> train ->
// segment -> eval. Every command writes a JSON run manifest next to its
// outputs. Exit codes: 0 success, 2 usage error, 3 data/shape error,
// 4 internal assertion.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aggseg/classify.hpp"
#include "aggseg/eval.hpp"
#include "aggseg/features.hpp"
#include "aggseg/learn.hpp"
#include "aggseg/rag.hpp"
#include "aggseg/synth.hpp"
#include "aggseg/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aggseg;

namespace {

constexpr const char* kVersion = "0.1.0";

using Clock = std::chrono::steady_clock;

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<std::uint64_t> parse_shape(const std::string& text) {
    std::vector<std::uint64_t> extents;
    std::string token;
    for (char c : text + "x") {
        if (c == 'x' || c == 'X' || c == ',') {
            if (!token.empty()) extents.push_back(std::stoull(token));
            token.clear();
        } else {
            token.push_back(c);
        }
    }
    if (extents.empty()) throw DataError("cannot parse shape: " + text);
    return extents;
}

// "a:b:n" = n evenly spaced thresholds from a to b; otherwise a comma list
std::vector<double> parse_thresholds(const std::string& text) {
    std::vector<double> out;
    if (text.find(':') != std::string::npos) {
        double a = 0, b = 0;
        int n = 0;
        if (std::sscanf(text.c_str(), "%lf:%lf:%d", &a, &b, &n) != 3 || n < 2)
            throw DataError("cannot parse threshold grid: " + text);
        for (int i = 0; i < n; ++i) out.push_back(a + (b - a) * double(i) / double(n - 1));
    } else {
        for (const auto& item : split_commas(text)) out.push_back(std::stod(item));
    }
    if (out.empty()) throw DataError("no thresholds given");
    return out;
}

std::string digest_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    char buf[32];
    std::snprintf(buf, sizeof(buf), "fnv1a:%016llx",
                  (unsigned long long)fnv1a64(bytes.data(), bytes.size()));
    return buf;
}

struct ManifestWriter {
    std::string command;
    json config = json::object();
    json seeds = json::object();
    json inputs = json::object();
    Clock::time_point start = Clock::now();

    void input(const fs::path& path) { inputs[path.string()] = digest_file(path); }

    void write(const fs::path& path) const {
        json m{{"command", command},
               {"tool_version", kVersion},
               {"config", config},
               {"seeds", seeds},
               {"inputs", inputs},
               {"wall_time_s", std::chrono::duration<double>(Clock::now() - start).count()}};
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw DataError("cannot open for writing: " + path.string());
        f << m.dump(2) << '\n';
    }
};

// Loads --config JSON ahead of CLI11 so flags can override file values.
json preload_config(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream f(argv[i + 1]);
            if (!f) throw DataError(std::string("cannot open config: ") + argv[i + 1]);
            json j;
            try {
                f >> j;
            } catch (const json::exception& e) {
                throw DataError("malformed config JSON: " + std::string(e.what()));
            }
            return j;
        }
    }
    return json::object();
}

template <class T>
void from_config(const json& cfg, const char* key, T& value) {
    if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

FeatureMap make_feature_map(std::size_t channels, std::size_t ndim, std::size_t bins,
                            std::size_t quantiles) {
    return FeatureMap(default_feature_config(channels, ndim, bins, quantiles));
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f << text;
    if (!f) throw DataError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string shape = "128x128";
    std::uint64_t regions = 20;
    std::uint64_t blur = 1;
    double noise = 0.2;
    bool texture = true;
    double texture_noise = 0.2;
    std::uint64_t seed = 42;
    std::string out;
};

int run_synth(const SynthArgs& args) {
    SynthConfig cfg;
    cfg.shape = parse_shape(args.shape);
    cfg.regions = args.regions;
    cfg.blur_radius = args.blur;
    cfg.boundary_noise = args.noise;
    cfg.texture = args.texture;
    cfg.texture_noise = args.texture_noise;
    cfg.seed = args.seed;

    ManifestWriter manifest;
    manifest.command = "synth";
    manifest.config = {{"shape", cfg.shape},          {"regions", cfg.regions},
                       {"blur", cfg.blur_radius},     {"noise", cfg.boundary_noise},
                       {"texture", cfg.texture},      {"texture_noise", cfg.texture_noise},
                       {"seed", cfg.seed}};
    manifest.seeds = {{"master", cfg.seed}};

    auto data = generate(cfg);
    fs::create_directories(args.out);
    const fs::path dir(args.out);
    save_volume(data.gt, dir / "gt.ndv");
    save_volume(data.cues, dir / "cues.ndv");
    save_volume(data.sp, dir / "sp.ndv");
    write_text(dir / "config.json", manifest.config.dump(2) + "\n");
    manifest.write(dir / "manifest.json");
    std::cout << "synth: wrote gt.ndv, cues.ndv, sp.ndv to " << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// watershed
// ---------------------------------------------------------------------------

struct WatershedArgs {
    std::string cues;
    std::string seeds;
    std::size_t channel = 0;
    std::string out;
};

int run_watershed(const WatershedArgs& args) {
    ManifestWriter manifest;
    manifest.command = "watershed";
    manifest.config = {{"cues", args.cues}, {"channel", args.channel}, {"seeds", args.seeds}};
    manifest.input(args.cues);

    auto cues = load_cues(args.cues);
    LabelVolume seeds;
    if (args.seeds.empty()) {
        seeds = regional_minima(cues, args.channel, Connectivity::face);
    } else {
        manifest.input(args.seeds);
        seeds = load_labels(args.seeds);
    }
    auto sp = watershed(cues, args.channel, seeds, Connectivity::face);
    save_volume(sp, args.out);
    manifest.write(args.out + ".manifest.json");
    std::cout << "watershed: wrote " << args.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string sp, cues, gt;
    std::string method = "gala";
    int epochs = 5;
    std::string init = "flat";
    bool mix_lash = false;
    std::uint64_t seed = 0;
    std::size_t trees = 100;
    std::size_t depth = 20;
    std::size_t min_leaf = 1;
    std::size_t mtry = 0;
    std::size_t bins = 25;
    std::size_t quantiles = 9;
    std::string from_csv;
    std::string out;
};

// Offline re-training from a previously dumped training set. The sidecar
// provenance JSON supplies the feature map so the model stays usable for
// segmentation.
int run_train_from_csv(const TrainArgs& args) {
    ManifestWriter manifest;
    manifest.command = "train";
    manifest.config = {{"from_csv", args.from_csv}, {"seed", args.seed},
                       {"trees", args.trees},       {"depth", args.depth},
                       {"min_leaf", args.min_leaf}, {"mtry", args.mtry}};
    manifest.seeds = {{"forest", args.seed}};
    manifest.input(args.from_csv);

    std::ifstream f(args.from_csv);
    if (!f) throw DataError("cannot open: " + args.from_csv);
    auto pool = read_training_csv(f);

    FeatureConfig fm_cfg;  // raw unless the sidecar names the managers
    std::string sidecar = args.from_csv;
    const std::string suffix = ".training.csv";
    if (sidecar.size() > suffix.size() &&
        sidecar.compare(sidecar.size() - suffix.size(), suffix.size(), suffix) == 0)
        sidecar = sidecar.substr(0, sidecar.size() - suffix.size()) + ".provenance.json";
    else
        sidecar += ".provenance.json";
    if (fs::exists(sidecar)) {
        manifest.input(sidecar);
        std::ifstream sf(sidecar);
        json j;
        try {
            sf >> j;
        } catch (const json::exception& e) {
            throw DataError("malformed provenance JSON: " + std::string(e.what()));
        }
        if (j.contains("feature_map")) fm_cfg = feature_config_from_json(j.at("feature_map"));
    }

    ForestParams forest;
    forest.n_trees = args.trees;
    forest.max_depth = args.depth;
    forest.min_leaf = args.min_leaf;
    forest.features_per_split = args.mtry;
    forest.seed = args.seed;
    auto model = train_forest(pool, forest, fm_cfg);
    save_model(model, args.out);
    manifest.write(args.out + ".manifest.json");
    std::cout << "train: wrote " << args.out << " (from " << args.from_csv << ")\n";
    return 0;
}

int run_train(const TrainArgs& args) {
    if (!args.from_csv.empty()) return run_train_from_csv(args);
    if (args.sp.empty() || args.cues.empty() || args.gt.empty())
        throw DataError("train needs --sp, --cues and --gt (or --from-csv)");
    ManifestWriter manifest;
    manifest.command = "train";
    manifest.config = {{"method", args.method},   {"epochs", args.epochs},
                       {"init", args.init},       {"mix_lash", args.mix_lash},
                       {"seed", args.seed},       {"trees", args.trees},
                       {"depth", args.depth},     {"min_leaf", args.min_leaf},
                       {"mtry", args.mtry},       {"bins", args.bins},
                       {"quantiles", args.quantiles}};
    manifest.seeds = {{"forest", args.seed}};
    manifest.input(args.sp);
    manifest.input(args.cues);
    manifest.input(args.gt);

    auto sp = load_labels(args.sp);
    auto cues = load_cues(args.cues);
    auto gt = load_labels(args.gt);
    if (sp.shape != cues.shape || sp.shape != gt.shape)
        throw DataError("train: input volume shapes disagree");

    auto fm = make_feature_map(cues.channels, sp.shape.ndim(), args.bins, args.quantiles);

    TrainOptions opts;
    opts.epochs = args.method == "flat" ? 0 : args.epochs;
    opts.forest.n_trees = args.trees;
    opts.forest.max_depth = args.depth;
    opts.forest.min_leaf = args.min_leaf;
    opts.forest.features_per_split = args.mtry;
    opts.forest.seed = args.seed;
    opts.mix_lash = args.mix_lash;
    opts.random_seed = args.seed;
    if (args.init == "flat")
        opts.init = InitPolicy::flat;
    else if (args.init == "mean")
        opts.init = InitPolicy::mean;
    else
        opts.init = InitPolicy::random;

    // the training-set dump mirrors what the final model saw
    TrainingSet pool;
    ForestModel model;
    if (args.method == "lash")
        model = lash_train(sp, cues, gt, fm, opts, &pool);
    else
        model = gala_train(sp, cues, gt, fm, opts, &pool);

    save_model(model, args.out);
    {
        std::ostringstream csv;
        write_training_csv(pool, csv);
        write_text(args.out + ".training.csv", csv.str());
        const auto fm_cfg = fm.config();
        write_text(args.out + ".provenance.json",
                   training_provenance_json(pool, &fm_cfg).dump(2) + "\n");
    }
    manifest.write(args.out + ".manifest.json");
    std::cout << "train: wrote " << args.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// segment
// ---------------------------------------------------------------------------

struct SegmentArgs {
    std::string sp, cues, model;
    std::string policy = "learned";
    double threshold = 0.5;
    std::size_t channel = 0;
    std::uint64_t seed = 0;
    std::string save_tree;
    std::string out;
};

int run_segment(const SegmentArgs& args) {
    ManifestWriter manifest;
    manifest.command = "segment";
    manifest.config = {{"policy", args.policy},   {"threshold", args.threshold},
                       {"channel", args.channel}, {"seed", args.seed},
                       {"save_tree", args.save_tree}};
    if (args.policy == "random") manifest.seeds = {{"policy", args.seed}};
    manifest.input(args.sp);
    manifest.input(args.cues);

    auto sp = load_labels(args.sp);
    auto cues = load_cues(args.cues);
    if (sp.shape != cues.shape) throw DataError("segment: input volume shapes disagree");

    Policy policy;
    Rag::Config cfg;
    ForestModel model;
    if (args.policy == "learned") {
        if (args.model.empty()) throw DataError("segment: --policy learned requires --model");
        manifest.input(args.model);
        model = load_model(args.model);
        if (model.feature_map.managers.empty())
            throw DataError("segment: model carries no feature map");
        if (model.feature_map.channels != cues.channels)
            throw DataError("segment: model feature map expects " +
                            std::to_string(model.feature_map.channels) + " channels, cues have " +
                            std::to_string(cues.channels));
        FeatureMap fm(model.feature_map);
        cfg.hist_bins = fm.hist_bins();
        cfg.with_spatial = fm.needs_spatial();
        if (cfg.with_spatial && sp.shape.ndim() != 2)
            throw DataError("segment: model uses 2D features but input is not 2D");
        policy = learned_policy(model);
    } else if (args.policy == "mean") {
        if (args.channel >= cues.channels) throw DataError("segment: channel out of range");
        policy = Policy::mean_boundary(args.channel);
    } else {
        policy = Policy::random(args.seed);
    }

    auto rag = build_rag(sp, cues, cfg);
    LabelVolume seg;
    if (!args.save_tree.empty()) {
        // full merge log, then the prefix cut reproduces the thresholded run
        auto full = agglomerate(rag, policy, std::numeric_limits<double>::infinity());
        std::ostringstream csv;
        write_dendrogram_csv(full, csv);
        write_text(args.save_tree, csv.str());
        seg = apply_threshold(sp, full, args.threshold);
    } else {
        auto d = agglomerate(rag, policy, args.threshold);
        seg = apply_threshold(sp, d, args.threshold);
    }
    save_volume(seg, args.out);
    manifest.write(args.out + ".manifest.json");
    std::cout << "segment: wrote " << args.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string seg, gt, sp, tree;
    std::string metrics = "vi,ri,are,covering";
    bool sweep = false;
    bool ods = false;
    std::string thresholds = "0:1:21";
    std::size_t jobs = 1;
    std::string out;
};

void append_metric_rows(std::ostringstream& csv, const std::string& threshold,
                        const std::vector<std::string>& metrics, const ContingencyTable& table) {
    for (const auto& m : metrics) {
        if (m == "vi") {
            csv << "vi," << threshold << ',' << format_real17(vi(table).total) << '\n';
        } else if (m == "splitvi") {
            auto r = vi(table);
            csv << "vi_under," << threshold << ',' << format_real17(r.under) << '\n';
            csv << "vi_over," << threshold << ',' << format_real17(r.over) << '\n';
        } else if (m == "ri") {
            csv << "ri," << threshold << ',' << format_real17(rand_index(table)) << '\n';
        } else if (m == "are") {
            csv << "are," << threshold << ',' << format_real17(adjusted_rand_error(table)) << '\n';
        } else if (m == "covering") {
            csv << "covering," << threshold << ',' << format_real17(covering(table)) << '\n';
        } else if (m != "breakdown") {
            throw DataError("unknown metric: " + m);
        }
    }
}

std::string breakdown_csv(const ContingencyTable& table) {
    auto b = vi_breakdown(table);
    std::ostringstream csv;
    csv << "segment_id,mass,entropy,direction\n";
    for (const auto& row : b.gold_rows)
        csv << row.id << ',' << format_real17(row.mass) << ',' << format_real17(row.entropy)
            << ",false_split\n";
    for (const auto& row : b.seg_rows)
        csv << row.id << ',' << format_real17(row.mass) << ',' << format_real17(row.entropy)
            << ",false_merge\n";
    return csv.str();
}

int run_eval(const EvalArgs& args) {
    ManifestWriter manifest;
    manifest.command = "eval";
    manifest.config = {{"metrics", args.metrics}, {"sweep", args.sweep},
                       {"ods", args.ods},         {"thresholds", args.thresholds},
                       {"jobs", args.jobs}};
    const auto metrics = split_commas(args.metrics);

    std::ostringstream csv;
    if (args.ods) {
        const auto sps = split_commas(args.sp);
        const auto trees = split_commas(args.tree);
        const auto gts = split_commas(args.gt);
        if (sps.empty() || sps.size() != trees.size() || sps.size() != gts.size())
            throw DataError("eval --ods needs matching --sp, --tree, --gt lists");
        for (const auto& p : sps) manifest.input(p);
        for (const auto& p : trees) manifest.input(p);
        for (const auto& p : gts) manifest.input(p);
        const auto grid = parse_thresholds(args.thresholds);

        std::vector<std::vector<MetricSweepRow>> rows(sps.size());
        std::atomic<std::size_t> cursor{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        auto work = [&] {
            while (true) {
                const std::size_t i = cursor.fetch_add(1);
                if (i >= sps.size()) break;
                try {
                    auto sp = load_labels(sps[i]);
                    auto gt = load_labels(gts[i]);
                    std::ifstream f(trees[i]);
                    if (!f) throw DataError("cannot open: " + trees[i]);
                    auto d = read_dendrogram_csv(f);
                    rows[i] = metric_sweep(sp, d, gt, grid);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    break;
                }
            }
        };
        const std::size_t workers = std::max<std::size_t>(1, std::min(args.jobs, sps.size()));
        if (workers <= 1) {
            work();
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
            for (auto& th : pool) th.join();
        }
        if (failure) std::rethrow_exception(failure);

        csv << "metric,ods_threshold,ods_score,ois_score\n";
        for (const auto& m : metrics) {
            std::vector<std::vector<std::pair<double, double>>> curves(rows.size());
            bool lower_better = true;
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (const auto& r : rows[i]) {
                    double v = 0;
                    if (m == "vi")
                        v = r.vi_total;
                    else if (m == "ri")
                        v = r.ri, lower_better = false;
                    else if (m == "are")
                        v = r.are;
                    else if (m == "covering")
                        v = r.cov, lower_better = false;
                    else
                        throw DataError("metric not available under --ods: " + m);
                    curves[i].push_back({r.threshold, v});
                }
            auto o = ods_ois(curves, lower_better);
            csv << m << ',' << format_real17(o.ods_threshold) << ','
                << format_real17(o.ods_score) << ',' << format_real17(o.ois_score) << '\n';
        }
    } else if (args.sweep) {
        if (args.sp.empty() || args.tree.empty() || args.gt.empty())
            throw DataError("eval --sweep needs --sp, --tree and --gt");
        manifest.input(args.sp);
        manifest.input(args.tree);
        manifest.input(args.gt);
        auto sp = load_labels(args.sp);
        auto gt = load_labels(args.gt);
        std::ifstream f(args.tree);
        if (!f) throw DataError("cannot open: " + args.tree);
        auto d = read_dendrogram_csv(f);
        const auto grid = parse_thresholds(args.thresholds);
        auto rows = metric_sweep(sp, d, gt, grid);
        csv << "metric,threshold,value\n";
        for (const auto& r : rows) {
            const std::string t = format_real17(r.threshold);
            for (const auto& m : metrics) {
                if (m == "vi")
                    csv << "vi," << t << ',' << format_real17(r.vi_total) << '\n';
                else if (m == "splitvi") {
                    csv << "vi_under," << t << ',' << format_real17(r.vi_under) << '\n';
                    csv << "vi_over," << t << ',' << format_real17(r.vi_over) << '\n';
                } else if (m == "ri")
                    csv << "ri," << t << ',' << format_real17(r.ri) << '\n';
                else if (m == "are")
                    csv << "are," << t << ',' << format_real17(r.are) << '\n';
                else if (m == "covering")
                    csv << "covering," << t << ',' << format_real17(r.cov) << '\n';
                else
                    throw DataError("metric not available under --sweep: " + m);
            }
        }
    } else {
        if (args.seg.empty() || args.gt.empty()) throw DataError("eval needs --seg and --gt");
        manifest.input(args.seg);
        manifest.input(args.gt);
        auto seg = load_labels(args.seg);
        auto gt = load_labels(args.gt);
        auto table = contingency(seg, gt);
        csv << "metric,threshold,value\n";
        append_metric_rows(csv, "", metrics, table);
        for (const auto& m : metrics)
            if (m == "breakdown") write_text(args.out + ".breakdown.csv", breakdown_csv(table));
    }

    write_text(args.out, csv.str());
    manifest.write(args.out + ".manifest.json");
    std::cout << "eval: wrote " << args.out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical agglomeration of oversegmented n-dimensional images"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    std::string config_path;
    const char* config_help = "JSON config file; flags override its values";
    app.add_option("--config", config_path, config_help);

    json cfg;
    try {
        cfg = preload_config(argc, argv);
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }

    SynthArgs synth_args;
    from_config(cfg, "shape", synth_args.shape);
    from_config(cfg, "regions", synth_args.regions);
    from_config(cfg, "blur", synth_args.blur);
    from_config(cfg, "noise", synth_args.noise);
    from_config(cfg, "texture", synth_args.texture);
    from_config(cfg, "texture_noise", synth_args.texture_noise);
    from_config(cfg, "seed", synth_args.seed);
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic benchmark triple");
    synth_cmd->add_option("--shape", synth_args.shape, "extents, e.g. 128x128");
    synth_cmd->add_option("--regions", synth_args.regions, "gold-standard region count");
    synth_cmd->add_option("--blur", synth_args.blur, "boundary box-blur radius (voxels)");
    synth_cmd->add_option("--noise", synth_args.noise, "boundary noise amplitude in [0,1]");
    synth_cmd->add_flag("--texture,!--no-texture", synth_args.texture, "emit a texture channel");
    synth_cmd->add_option("--texture-noise", synth_args.texture_noise, "texture noise amplitude");
    synth_cmd->add_option("--seed", synth_args.seed, "master seed");
    synth_cmd->add_option("--out", synth_args.out, "output directory")->required();

    WatershedArgs ws_args;
    from_config(cfg, "channel", ws_args.channel);
    auto* ws_cmd = app.add_subcommand("watershed", "superpixels by priority flood");
    ws_cmd->add_option("--cues", ws_args.cues, "cue volume (.ndv)")->required();
    ws_cmd->add_option("--seeds", ws_args.seeds, "seed labels; default: regional minima");
    ws_cmd->add_option("--channel", ws_args.channel, "cue channel to flood");
    ws_cmd->add_option("--out", ws_args.out, "output label volume (.ndv)")->required();

    TrainArgs train_args;
    from_config(cfg, "method", train_args.method);
    from_config(cfg, "epochs", train_args.epochs);
    from_config(cfg, "init", train_args.init);
    from_config(cfg, "mix_lash", train_args.mix_lash);
    from_config(cfg, "seed", train_args.seed);
    from_config(cfg, "trees", train_args.trees);
    from_config(cfg, "depth", train_args.depth);
    from_config(cfg, "min_leaf", train_args.min_leaf);
    from_config(cfg, "mtry", train_args.mtry);
    from_config(cfg, "bins", train_args.bins);
    from_config(cfg, "quantiles", train_args.quantiles);
    auto* train_cmd = app.add_subcommand("train", "train a merge policy model");
    train_cmd->add_option("--sp", train_args.sp, "superpixel labels (.ndv)");
    train_cmd->add_option("--cues", train_args.cues, "cue volume (.ndv)");
    train_cmd->add_option("--gt", train_args.gt, "gold-standard labels (.ndv)");
    train_cmd->add_option("--from-csv", train_args.from_csv,
                          "re-train offline from a dumped training set");
    train_cmd->add_option("--method", train_args.method, "flat | gala | lash")
        ->check(CLI::IsMember({"flat", "gala", "lash"}));
    train_cmd->add_option("--epochs", train_args.epochs, "training epochs")
        ->check(CLI::NonNegativeNumber);
    train_cmd->add_option("--init", train_args.init, "initial policy: flat | mean | random")
        ->check(CLI::IsMember({"flat", "mean", "random"}));
    train_cmd->add_flag("--mix-lash", train_args.mix_lash, "append LASH examples per epoch");
    train_cmd->add_option("--seed", train_args.seed, "forest / random-policy seed");
    train_cmd->add_option("--trees", train_args.trees, "forest size");
    train_cmd->add_option("--depth", train_args.depth, "maximum tree depth");
    train_cmd->add_option("--min-leaf", train_args.min_leaf, "minimum samples per leaf");
    train_cmd->add_option("--mtry", train_args.mtry, "features per split (0 = sqrt(q))");
    train_cmd->add_option("--bins", train_args.bins, "histogram bins");
    train_cmd->add_option("--quantiles", train_args.quantiles, "histogram quantiles");
    train_cmd->add_option("--out", train_args.out, "model file (.json)")->required();

    SegmentArgs seg_args;
    from_config(cfg, "policy", seg_args.policy);
    from_config(cfg, "threshold", seg_args.threshold);
    from_config(cfg, "channel", seg_args.channel);
    from_config(cfg, "seed", seg_args.seed);
    auto* seg_cmd = app.add_subcommand("segment", "agglomerate superpixels under a policy");
    seg_cmd->add_option("--sp", seg_args.sp, "superpixel labels (.ndv)")->required();
    seg_cmd->add_option("--cues", seg_args.cues, "cue volume (.ndv)")->required();
    seg_cmd->add_option("--model", seg_args.model, "model file for --policy learned");
    seg_cmd->add_option("--policy", seg_args.policy, "learned | mean | random")
        ->check(CLI::IsMember({"learned", "mean", "random"}));
    seg_cmd->add_option("--threshold", seg_args.threshold, "stop threshold (default 0.5)");
    seg_cmd->add_option("--channel", seg_args.channel, "cue channel for --policy mean");
    seg_cmd->add_option("--seed", seg_args.seed, "seed for --policy random");
    seg_cmd->add_option("--save-tree", seg_args.save_tree, "write the full merge log CSV here");
    seg_cmd->add_option("--out", seg_args.out, "output segmentation (.ndv)")->required();

    EvalArgs eval_args;
    from_config(cfg, "metrics", eval_args.metrics);
    from_config(cfg, "thresholds", eval_args.thresholds);
    from_config(cfg, "jobs", eval_args.jobs);
    auto* eval_cmd = app.add_subcommand("eval", "region metrics against a gold standard");
    eval_cmd->add_option("--seg", eval_args.seg, "segmentation labels (.ndv)");
    eval_cmd->add_option("--gt", eval_args.gt, "gold labels (.ndv; comma list under --ods)");
    eval_cmd->add_option("--sp", eval_args.sp, "superpixels for --sweep/--ods");
    eval_cmd->add_option("--tree", eval_args.tree, "dendrogram CSV for --sweep/--ods");
    eval_cmd->add_option("--metrics", eval_args.metrics,
                         "subset of vi,splitvi,ri,are,covering,breakdown");
    eval_cmd->add_flag("--sweep", eval_args.sweep, "metric curves along a merge log");
    eval_cmd->add_flag("--ods", eval_args.ods, "aggregate ODS/OIS across image pairs");
    eval_cmd->add_option("--thresholds", eval_args.thresholds, "grid a:b:n or comma list");
    eval_cmd->add_option("--jobs", eval_args.jobs, "parallel images under --ods");
    eval_cmd->add_option("--out", eval_args.out, "output CSV")->required();

    for (auto* cmd : {synth_cmd, ws_cmd, train_cmd, seg_cmd, eval_cmd})
        cmd->add_option("--config", config_path, config_help);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth_cmd->parsed()) return run_synth(synth_args);
        if (ws_cmd->parsed()) return run_watershed(ws_args);
        if (train_cmd->parsed()) return run_train(train_args);
        if (seg_cmd->parsed()) return run_segment(seg_args);
        if (eval_cmd->parsed()) return run_eval(eval_args);
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
