#include "sire/cli.hpp"

#include "sire/experiments.hpp"
#include "sire/geometry.hpp"
#include "sire/network.hpp"
#include "sire/phantom.hpp"
#include "sire/tracker.hpp"
#include "sire/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <omp.h>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace sire {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<double> parse_numbers(const std::string& text, const std::string& what)
{
    std::vector<std::string> tokens;
    std::stringstream ss(text);
    for (std::string tok; std::getline(ss, tok, ',');) tokens.push_back(tok);
    std::vector<double> out;
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        const std::string& tok = tokens[k];
        if (tok == "...") {
            // a,b,...,c expands with step b - a.
            if (out.size() < 2 || k + 1 >= tokens.size()) throw ValidationError("cannot expand '...' in " + what);
            const double step = out[out.size() - 1] - out[out.size() - 2];
            const double end = parse_numbers(tokens[k + 1], what).front();
            if (!(step > 0.0)) throw ValidationError("'...' needs an increasing sequence in " + what);
            for (double v = out.back() + step; v < end - 1e-9 * step; v += step) out.push_back(v);
            continue;
        }
        try {
            std::size_t used = 0;
            const double v = std::stod(tok, &used);
            if (used != tok.size() || !std::isfinite(v)) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ValidationError("invalid number '" + tok + "' in " + what);
        }
    }
    if (out.empty()) throw ValidationError("empty " + what);
    return out;
}

Vec3 parse_point(const std::string& text)
{
    const auto v = parse_numbers(text, "point");
    if (v.size() != 3) throw ValidationError("expected x,y,z but got '" + text + "'");
    return Vec3(v[0], v[1], v[2]);
}

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out << std::setw(2) << j << '\n';
    if (!out) throw RuntimeFailure("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create output directory " + dir.string());
}

json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

void collect_points(const json& j, std::vector<Vec3>& out)
{
    if (j.is_object()) {
        out.emplace_back(j.at("x_mm").get<double>(), j.at("y_mm").get<double>(), j.at("z_mm").get<double>());
    } else if (j.is_array() && j.size() == 3 && j[0].is_number()) {
        out.emplace_back(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
    } else if (j.is_array()) {
        for (const auto& e : j) collect_points(e, out);
    } else {
        throw ValidationError("seed entries must be [x, y, z] or {x_mm, y_mm, z_mm}");
    }
}

std::vector<Vec3> load_seeds(const fs::path& path)
{
    std::vector<Vec3> seeds;
    try {
        collect_points(read_json(path), seeds);
    } catch (const json::exception& e) {
        throw ValidationError("malformed seed file: " + std::string(e.what()));
    }
    return seeds;
}

ImageVolume load_windowed(const fs::path& path)
{
    try {
        return rescale_window(load_volume(path));
    } catch (const VolumeIoError& e) {
        if (e.kind() == VolumeIoErrorKind::Io) throw;
        throw ValidationError(e.what());
    }
}

json track_summary(const TrackResult& r)
{
    return {{"seed", vec_json(r.seed)},
            {"d1", vec_json(r.d1)},
            {"d2", vec_json(r.d2)},
            {"points", r.steps.size()},
            {"seed_index", r.seed_index},
            {"leg1_termination", to_string(r.leg1)},
            {"leg2_termination", to_string(r.leg2)}};
}

struct TrackArgs {
    std::string volume, weights, scales = "1,2,3,4,5,6,7,8,9,10", out;
    double step = 0.25, tau = 0.9;
    int max_steps = 4000;
    int subdivisions = 3;

    void add(CLI::App* cmd)
    {
        cmd->add_option("--volume", volume, "Volume file (SIREVOL1)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--weights", weights, "Weights file (SIREWTS1)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--scales", scales, "Comma-separated probe radii in mm");
        cmd->add_option("--step", step, "Step size in mm");
        cmd->add_option("--tau", tau, "Normalised entropy threshold");
        cmd->add_option("--max-steps", max_steps, "Step limit per leg");
        cmd->add_option("--out", out, "Output directory")->required();
    }

    TrackerConfig config() const
    {
        TrackerConfig c;
        c.scales = parse_numbers(scales, "scale list");
        c.step = step;
        c.tau = tau;
        c.max_steps = max_steps;
        c.validate();
        return c;
    }
};

int cmd_gen_phantom(const std::string& config_path, const std::string& out_dir, const std::optional<std::uint64_t>& seed)
{
    const json cfg = read_json(config_path);
    ensure_dir(out_dir);
    std::vector<std::pair<std::string, PhantomSpec>> specs;
    if (cfg.contains("corpus")) {
        CorpusSpec corpus = corpus_spec_from_json(cfg.at("corpus"));
        if (seed) corpus.seed = *seed;
        const auto list = make_corpus(corpus);
        for (std::size_t k = 0; k < list.size(); ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "case_%03zu", k);
            specs.emplace_back(name, list[k]);
        }
    } else {
        PhantomSpec spec = phantom_spec_from_json(cfg);
        if (seed) spec.seed = *seed;
        specs.emplace_back(cfg.value("name", std::string("phantom")), spec);
    }
    for (const auto& [name, spec] : specs) {
        const Phantom p = generate(spec);
        save_volume(p.volume, fs::path(out_dir) / (name + ".sirevol"));
        save_centerlines(p.centerlines, fs::path(out_dir) / (name + ".centerlines.json"));
        std::cout << name << ": " << p.volume.dims[0] << "x" << p.volume.dims[1] << "x" << p.volume.dims[2] << ", "
                  << p.centerlines.size() << " branch(es)\n";
    }
    return 0;
}

}  // namespace

int run_cli(int argc, char** argv)
{
    CLI::App app{"Scale-invariant, rotation-equivariant vessel orientation estimation and tracking"};
    app.require_subcommand(1);
    app.fallthrough();
    int workers = 0;
    app.add_option("--workers", workers, "Worker threads (1 gives bit-reproducible runs)")->check(CLI::PositiveNumber);

    // gen-phantom
    auto* gen = app.add_subcommand("gen-phantom", "Generate a phantom volume or a training corpus");
    std::string gen_config, gen_out;
    std::optional<std::uint64_t> gen_seed;
    gen->add_option("--config", gen_config, "Phantom spec JSON, or {\"corpus\": {...}}")
        ->required()
        ->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--seed", gen_seed, "RNG seed (overrides the config)");

    // train
    auto* tr = app.add_subcommand("train", "Train an estimator on a phantom directory");
    std::string tr_data, tr_config, tr_out, tr_loss;
    std::optional<double> tr_lr;
    std::optional<int> tr_epochs, tr_samples;
    std::optional<std::uint64_t> tr_seed;
    tr->add_option("--data", tr_data, "Directory of .sirevol + .centerlines.json pairs")
        ->required()
        ->check(CLI::ExistingDirectory);
    tr->add_option("--config", tr_config, "Training config JSON")->required()->check(CLI::ExistingFile);
    tr->add_option("--out", tr_out, "Output weights file")->required();
    tr->add_option("--loss-csv", tr_loss, "Loss history CSV (default: <out>.loss.csv)");
    tr->add_option("--lr", tr_lr, "Learning rate override");
    tr->add_option("--epochs", tr_epochs, "Epoch count override");
    tr->add_option("--samples-per-epoch", tr_samples, "Samples per epoch override");
    tr->add_option("--seed", tr_seed, "RNG seed (overrides the config)");

    // track
    auto* tk = app.add_subcommand("track", "Track one centerline from a seed point");
    TrackArgs tk_args;
    std::string tk_seed;
    tk_args.add(tk);
    tk->add_option("--seed", tk_seed, "Seed point x,y,z in mm")->required();

    // extract-tree
    auto* et = app.add_subcommand("extract-tree", "Track a vessel tree from a queue of seeds");
    TrackArgs et_args;
    std::string et_seeds;
    et_args.add(et);
    et->add_option("--seeds", et_seeds, "JSON list of seed points")->required()->check(CLI::ExistingFile);

    // eval
    auto* ev = app.add_subcommand("eval", "Score tracked centerlines against a reference");
    std::string ev_tracked, ev_reference, ev_out, ev_csv;
    double ev_step = 0.25;
    ev->add_option("--tracked", ev_tracked, "Tracked centerline JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--reference", ev_reference, "Reference centerline JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--out", ev_out, "Report JSON")->required();
    ev->add_option("--csv", ev_csv, "Per-branch CSV");
    ev->add_option("--step", ev_step, "Reference resampling step in mm");

    // check-equivariance
    auto* ce = app.add_subcommand("check-equivariance", "Rotation test on held-out phantoms");
    std::string ce_weights, ce_scales = "2,4,...,30";
    std::uint64_t ce_seed = 7;
    int ce_volumes = 10, ce_points = 20;
    ce->add_option("--weights", ce_weights, "Weights file")->required()->check(CLI::ExistingFile);
    ce->add_option("--seed", ce_seed, "RNG seed");
    ce->add_option("--volumes", ce_volumes, "Held-out volumes");
    ce->add_option("--points", ce_points, "Points per volume");
    ce->add_option("--scales", ce_scales, "Comma-separated probe radii in mm");

    // check-gradients
    auto* cg = app.add_subcommand("check-gradients", "Finite-difference gradient check in 64-bit precision");
    std::string cg_weights, cg_data;
    std::uint64_t cg_seed = 1;
    int cg_samples = 5, cg_params = 200;
    cg->add_option("--weights", cg_weights, "Weights file")->required()->check(CLI::ExistingFile);
    cg->add_option("--data", cg_data, "Phantom directory (default: a generated tube)")->check(CLI::ExistingDirectory);
    cg->add_option("--seed", cg_seed, "RNG seed");
    cg->add_option("--samples", cg_samples, "Number of samples");
    cg->add_option("--params", cg_params, "Parameters checked per sample");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (workers > 0) omp_set_num_threads(workers);

        if (*gen) return cmd_gen_phantom(gen_config, gen_out, gen_seed);

        if (*tr) {
            TrainConfig config = train_config_from_json(read_json(tr_config));
            if (tr_lr) config.learning_rate = *tr_lr;
            if (tr_epochs) config.epochs = *tr_epochs;
            if (tr_samples) config.samples_per_epoch = *tr_samples;
            if (tr_seed) config.seed = *tr_seed;
            config.validate();
            const Dataset data = load_dataset(tr_data);
            TrainOptions options;
            options.checkpoint = fs::path(tr_out);
            options.on_epoch = [&](const EpochStats& s) {
                std::cerr << "epoch " << s.epoch << "/" << config.epochs << "  loss " << s.mean_loss << "  pos "
                          << s.mean_pos_loss << "  neg " << s.mean_neg_loss << '\n';
            };
            const auto result = train(data, config, options);
            write_loss_csv(tr_loss.empty() ? fs::path(tr_out + ".loss.csv") : fs::path(tr_loss), result.history);
            return 0;
        }

        if (*tk) {
            const auto config = tk_args.config();
            const Vec3 seed = parse_point(tk_seed);
            const ImageVolume volume = load_windowed(tk_args.volume);
            const Estimator est(load_weights(tk_args.weights), tk_args.subdivisions);
            const auto result = track(volume, est, seed, config);
            ensure_dir(tk_args.out);
            const fs::path out(tk_args.out);
            save_centerlines({result.centerline()}, out / "track.centerlines.json");
            write_track_csv(out / "track.csv", result);
            write_json(out / "track.json", track_summary(result));
            std::cout << result.steps.size() << " points; leg 1 " << to_string(result.leg1) << ", leg 2 "
                      << to_string(result.leg2) << '\n';
            return 0;
        }

        if (*et) {
            const auto config = et_args.config();
            const auto seeds = load_seeds(et_seeds);
            const ImageVolume volume = load_windowed(et_args.volume);
            const Estimator est(load_weights(et_args.weights), et_args.subdivisions);
            const auto results = extract_tree(volume, est, seeds, config);
            ensure_dir(et_args.out);
            const fs::path out(et_args.out);
            std::vector<Centerline> lines;
            json summary = json::array();
            for (std::size_t k = 0; k < results.size(); ++k) {
                lines.push_back(results[k].centerline());
                char name[32];
                std::snprintf(name, sizeof name, "branch_%03zu.csv", k);
                write_track_csv(out / name, results[k]);
                summary.push_back(track_summary(results[k]));
            }
            save_centerlines(lines, out / "tree.centerlines.json");
            write_json(out / "tree.json", summary);
            std::cout << results.size() << " branch(es) from " << seeds.size() << " seed(s)\n";
            return 0;
        }

        if (*ev) {
            const auto tracked = load_centerlines(ev_tracked);
            const auto reference = load_centerlines(ev_reference);
            const auto r = evaluate(tracked, reference, ev_step);
            write_json(ev_out, to_json(r));
            if (!ev_csv.empty()) write_metrics_csv(ev_csv, evaluate_per_branch(tracked, reference, ev_step));
            std::cout << to_json(r).dump() << '\n';
            return 0;
        }

        if (*ce) {
            const Estimator est(load_weights(ce_weights));
            RotationExperimentConfig cfg;
            cfg.seed = ce_seed;
            cfg.volumes = ce_volumes;
            cfg.points_per_volume = ce_points;
            cfg.scales = parse_numbers(ce_scales, "scale list");
            const auto r = rotation_experiment(est, cfg);
            std::cout << "median cosine unrotated " << r.median_unrotated << "\nmedian cosine rotated   "
                      << r.median_rotated << "\npoints " << r.unrotated.size() << '\n';
            return 0;
        }

        if (*cg) {
            const ModelParams model = load_weights(cg_weights);
            std::mt19937_64 rng(cg_seed);
            Dataset data;
            if (!cg_data.empty()) {
                data = load_dataset(cg_data);
            } else {
                auto spec = make_tube(TubeShape::Curved, 3.0, 14.0, rng);
                spec.noise_sigma = 20.0;
                const Phantom p = windowed_phantom(spec);
                data.cases.push_back({p.volume, p.centerlines});
            }
            const auto mesh = build_icosphere(3);
            double worst = 0.0;
            for (int k = 0; k < cg_samples; ++k) {
                SampleOptions opts;
                opts.negative_probability = k % 2 ? 1.0 : 0.0;
                opts.channels = model.architecture.input_channels;
                const auto sample = draw_sample(data, mesh, ScaleSet::uniform(1.0, 10.0, 4), rng, opts);
                const auto r = gradient_check(model, sample, cg_params, rng());
                worst = std::max(worst, r.max_relative_error);
                std::cout << "sample " << k << (sample.negative ? " (negative)" : " (positive)")
                          << ": max relative error " << r.max_relative_error << " over " << r.checked
                          << " parameters\n";
            }
            std::cout << "max relative error " << worst << '\n';
            return worst < 1e-4 ? 0 : 2;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

}  // namespace sire
