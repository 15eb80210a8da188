// torsion: generate shape datasets, solve the torsion problem, train and
// evaluate the image surrogate.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "torsion/dataset.hpp"
#include "torsion/eval.hpp"
#include "torsion/fem.hpp"
#include "torsion/io_util.hpp"
#include "torsion/oracle.hpp"
#include "torsion/surrogate.hpp"

namespace fs = std::filesystem;
using namespace torsion;

namespace {

std::array<double, 3> parse_fractions(const std::string& s) {
    auto parts = split_csv_line(s);
    if (parts.size() != 3) throw CLI::ValidationError("--split expects three comma-separated fractions");
    return {std::stod(parts[0]), std::stod(parts[1]), std::stod(parts[2])};
}

std::vector<double> parse_range(const std::string& s) {
    // "lo:hi:count" inclusive linear range, or a comma-separated list
    if (s.find(':') != std::string::npos) {
        double lo, hi;
        int count;
        if (std::sscanf(s.c_str(), "%lf:%lf:%d", &lo, &hi, &count) != 3 || count < 1)
            throw CLI::ValidationError("range must be lo:hi:count");
        std::vector<double> out;
        for (int i = 0; i < count; ++i)
            out.push_back(count == 1 ? lo : lo + (hi - lo) * i / (count - 1));
        return out;
    }
    std::vector<double> out;
    for (const auto& p : split_csv_line(s)) out.push_back(std::stod(p));
    return out;
}

struct GenOptions {
    uint64_t seed = 1;
    int count = 1;
    int min_vertices = 3, max_vertices = 20;
    double spline_prob = 0.5;

    // configuration mistakes are usage errors, not runtime failures
    GenConfig config() const {
        GenConfig cfg;
        cfg.seed = seed;
        cfg.count = count;
        cfg.min_vertices = min_vertices;
        cfg.max_vertices = max_vertices;
        cfg.spline_prob = spline_prob;
        try {
            cfg.validate();
        } catch (const GeometryError& e) {
            throw CLI::ValidationError("config", e.what());
        }
        return cfg;
    }
    void add_flags(CLI::App* app) {
        app->add_option("--seed", seed, "master seed");
        app->add_option("--count", count, "number of base domains");
        app->add_option("--min-vertices", min_vertices, "minimum random vertex count");
        app->add_option("--max-vertices", max_vertices, "maximum random vertex count");
        app->add_option("--spline-prob", spline_prob, "probability of a spline boundary");
    }
    void echo(std::ostream& os) const {
        os << "config: seed=" << seed << " count=" << count << " min-vertices=" << min_vertices
           << " max-vertices=" << max_vertices << " spline-prob=" << spline_prob;
    }
};

int cmd_gen_domains(const GenOptions& gen, const std::string& out_dir) {
    GenConfig cfg = gen.config();
    fs::create_directories(out_dir);
    std::ofstream manifest(fs::path(out_dir) / "domains.csv");
    manifest << "id,file,vertices,area,spline\n";
    for (int i = 0; i < cfg.count; ++i) {
        Domain d = random_domain(cfg, i);
        char name[32];
        std::snprintf(name, sizeof name, "domain_%05d.txt", i);
        save_domain(d, (fs::path(out_dir) / name).string());
        manifest << i << ',' << name << ',' << d.loops[0].pts.size() << ','
                 << fmt_full(area(d)) << ',' << (d.loops[0].from_spline ? 1 : 0) << '\n';
    }
    gen.echo(std::cout);
    std::cout << " out=" << out_dir << '\n';
    std::cout << "wrote " << cfg.count << " domains\n";
    return 0;
}

int cmd_solve(const std::string& domain_file, double h, double tol, bool jacobi,
              const std::string& csv_path, const std::string& mesh_out) {
    Domain d = load_domain(domain_file);
    FemSolution sol = compute_torsion(d, h, tol, jacobi);
    std::cout << fmt_full(sol.torsion_value) << '\n';
    std::cout << "area=" << fmt_full(sol.domain_area) << " h=" << fmt_full(h)
              << " iterations=" << sol.iterations << " residual=" << fmt_full(sol.residual)
              << '\n';
    if (!csv_path.empty()) {
        bool fresh = !fs::exists(csv_path);
        std::ofstream os(csv_path, std::ios::app);
        if (fresh) os << "id,area,torsion,h,iterations,residual\n";
        write_solution_csv_row(os, d.id, sol);
    }
    if (!mesh_out.empty()) {
        std::ofstream os(mesh_out);
        dump_mesh(os, sol.mesh);
    }
    return 0;
}

int cmd_make_dataset(const GenOptions& gen, const std::string& out_dir, double h, int raster_n,
                     int copies, const std::string& split_str, uint64_t split_seed,
                     int workers) {
    auto fractions = parse_fractions(split_str);
    gen.echo(std::cout);
    std::cout << " h=" << h << " raster-n=" << raster_n << " copies=" << copies
              << " split=" << split_str << " split-seed=" << split_seed
              << " workers=" << workers << " out=" << out_dir << '\n';
    Dataset ds = generate(gen.config(), h, raster_n, workers);
    ds = augment(ds, copies, workers);
    split_dataset(ds, fractions, split_seed);
    std::string sum = save_dataset(ds, out_dir);
    std::cout << "samples=" << ds.samples.size() << " checksum=" << sum << '\n';
    return 0;
}

int cmd_train(const std::string& dataset_dir, const std::string& out_ckpt,
              const std::string& arch, int input_n, const TrainConfig& cfg,
              const std::string& history_path) {
    Dataset ds = load_dataset(dataset_dir);
    SplitTensors tr = split_tensors(ds, kTrain, input_n);
    SplitTensors val = split_tensors(ds, kVal, input_n);
    if (tr.x.empty() || val.x.empty())
        throw DatasetError("dataset has no training or no validation split");
    std::cout << "config: arch=" << arch << " input-n=" << input_n << " lr=" << cfg.lr
              << " lambda=" << cfg.lambda << " dropout=" << cfg.dropout
              << " batch=" << cfg.batch << " epochs=" << cfg.epochs
              << " patience=" << cfg.patience << " seed=" << cfg.seed
              << " workers=" << cfg.workers << " optimizer=" << cfg.optimizer
              << " dataset=" << dataset_dir << " out=" << out_ckpt << '\n';
    std::cout << "train=" << tr.x.size() << " val=" << val.x.size() << '\n';

    CnnModel<float> model = build_architecture(arch, input_n);
    model.init_he(cfg.seed);
    AdamState adam;
    TrainResult res = train(model, tr.x, tr.y, val.x, val.y, cfg, &adam);
    save_checkpoint(model, out_ckpt, cfg.optimizer == "adam" ? &adam : nullptr);
    if (!history_path.empty()) {
        std::ofstream os(history_path);
        write_history_csv(os, res.history);
    }
    std::cout << "epochs-run=" << res.history.size() << " best-epoch=" << res.best_epoch
              << " best-val-loss=" << fmt_full(res.best_val_loss) << '\n';
    return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& dataset_dir,
                 const std::string& out_dir, const std::string& sweeps_csv,
                 const std::string& annulus_r, const std::string& offsets_str, int pentagons,
                 int raster_n, double lambda, int workers, uint64_t seed) {
    CnnModel<float> model = load_checkpoint(ckpt_path);
    Dataset ds = load_dataset(dataset_dir);
    fs::create_directories(out_dir);

    EvalReport report;
    report.dataset_fingerprint = ds.checksum;
    report.checkpoint_id = [&] {
        std::string d = model.descriptor();
        char buf[16];
        std::snprintf(buf, sizeof buf, "%08x", Crc32::of(d.data(), d.size()));
        return std::string(buf);
    }();
    report.lambda = lambda;
    for (int s = 0; s < 3; ++s)
        report.per_split[s] = evaluate_split(model, ds, s, lambda, workers);

    Predictor pred{&model, raster_n};
    for (const auto& name : split_csv_line(sweeps_csv)) {
        if (name.empty() || name == "none") continue;
        if (name == "annulus") {
            report.sweeps.push_back(annulus_sweep(pred, parse_range(annulus_r)));
        } else if (name == "eccentric") {
            report.sweeps.push_back(eccentric_sweep(pred, parse_range(offsets_str)));
        } else if (name == "dilation") {
            Domain base = ellipse(0.45, 0.3, 256);
            report.sweeps.push_back(dilation_sweep(pred, base, {0.5, 1.0, 1.5, 2.0}));
        } else if (name == "additivity") {
            std::vector<AdditivityCase> cases;
            Rng rng(substream_seed(seed, 0xADD5ull));
            for (int i = 0; i < 8; ++i) {
                double a1 = rng.uniform(0.3, 0.8), b1 = rng.uniform(0.3, 0.8);
                double a2 = rng.uniform(0.3, 0.8), b2 = rng.uniform(0.3, 0.8);
                AdditivityCase c;
                c.a = transform(ellipse(a1, b1, 256), 0, {-1.0, 0});
                c.b = transform(ellipse(a2, b2, 256), 0, {1.0, 0});
                c.oracle_sum = torsion_ellipse(a1, b1) + torsion_ellipse(a2, b2);
                cases.push_back(std::move(c));
            }
            report.sweeps.push_back(additivity_sweep(pred, cases));
        } else if (name == "pentagon") {
            double c5 = pentagon_coefficient((fs::path(out_dir) / "pentagon_c5.txt").string());
            report.sweeps.push_back(pentagon_sweep(pred, pentagons, seed, c5));
        } else {
            throw EvalError("unknown sweep '" + name + "'");
        }
    }
    write_report(report, out_dir);
    const SplitMetrics& te = report.per_split[kTest];
    std::cout << "config: checkpoint=" << ckpt_path << " dataset=" << dataset_dir
              << " out=" << out_dir << " sweeps=" << sweeps_csv << " raster-n=" << raster_n
              << " lambda=" << lambda << " seed=" << seed << " workers=" << workers << '\n';
    std::cout << "Te: count=" << te.count << " loss=" << fmt_full(te.loss)
              << " mse=" << fmt_full(te.mse);
    if (te.mape_lv) std::cout << " mape_lv=" << fmt_full(*te.mape_lv);
    if (te.mape_sv) std::cout << " mape_sv=" << fmt_full(*te.mape_sv);
    std::cout << " sv_violation_rate=" << fmt_full(te.sv_violation_rate) << '\n';
    return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::vector<std::string>& inputs,
                int raster_n) {
    CnnModel<float> model = load_checkpoint(ckpt_path);
    Predictor pred{&model, raster_n};
    for (const auto& path : inputs) {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw IoError("cannot open " + path);
        char magic[8] = {};
        probe.read(magic, 7);
        probe.close();
        double y;
        if (std::string_view(magic, 7) == "TORIMG1")
            y = pred.predict(load_binary_image(path));
        else if (std::string_view(magic, 7) == "TORIMGF")
            y = pred.predict(load_gray_image(path));
        else
            y = pred(load_domain(path));
        std::cout << fmt_full(y) << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"torsional rigidity: FEM reference solver and CNN surrogate"};
    app.require_subcommand(1);
    // --h is a documented mesh-size flag, so help gets no short name
    app.set_help_flag("--help", "print help and exit");

    // gen-domains
    auto* gen_cmd = app.add_subcommand("gen-domains", "write random domain files");
    GenOptions gen_opts;
    gen_opts.add_flags(gen_cmd);
    std::string gen_out = "domains";
    gen_cmd->add_option("--out", gen_out, "output directory");

    // solve
    auto* solve_cmd = app.add_subcommand("solve", "torsion of one domain file by FEM");
    solve_cmd->set_help_flag("--help", "print help and exit");
    std::string solve_domain, solve_csv, solve_mesh;
    double solve_h = 0.02, solve_tol = 1e-10;
    bool solve_jacobi = false;
    solve_cmd->add_option("--domain", solve_domain, "domain file")->required();
    solve_cmd->add_option("--h", solve_h, "target mesh size");
    solve_cmd->add_option("--tol", solve_tol, "CG relative tolerance");
    solve_cmd->add_flag("--jacobi", solve_jacobi, "enable Jacobi preconditioning");
    solve_cmd->add_option("--csv", solve_csv, "append a summary row to this CSV");
    solve_cmd->add_option("--mesh-out", solve_mesh, "dump the mesh to this file");

    // make-dataset
    auto* mk_cmd = app.add_subcommand("make-dataset", "generate, augment, split and save");
    mk_cmd->set_help_flag("--help", "print help and exit");
    GenOptions mk_gen;
    mk_gen.count = 500;
    mk_gen.add_flags(mk_cmd);
    std::string mk_out = "dataset", mk_split = "0.7,0.1,0.2";
    double mk_h = 0.02;
    int mk_raster = 256, mk_copies = 3, mk_workers = 1;
    uint64_t mk_split_seed = 7;
    mk_cmd->add_option("--out", mk_out, "dataset directory");
    mk_cmd->add_option("--h", mk_h, "FEM mesh size for reference targets");
    mk_cmd->add_option("--raster-n", mk_raster, "raster resolution");
    mk_cmd->add_option("--copies", mk_copies, "augmented copies per base domain");
    mk_cmd->add_option("--split", mk_split, "Tr,Val,Te fractions");
    mk_cmd->add_option("--split-seed", mk_split_seed, "seed of the split shuffle");
    mk_cmd->add_option("--workers", mk_workers, "parallel workers");

    // train
    auto* train_cmd = app.add_subcommand("train", "train the surrogate on a dataset");
    std::string tr_dataset, tr_out = "model.ckpt", tr_arch = "desk", tr_history;
    int tr_input_n = 64;
    TrainConfig tr_cfg;
    tr_cfg.workers = 2;
    train_cmd->add_option("--dataset", tr_dataset, "dataset directory")->required();
    train_cmd->add_option("--out", tr_out, "checkpoint path");
    train_cmd->add_option("--arch", tr_arch, "desk|vgg16");
    train_cmd->add_option("--input-n", tr_input_n, "network input side");
    train_cmd->add_option("--lr", tr_cfg.lr, "learning rate");
    train_cmd->add_option("--lambda", tr_cfg.lambda, "weight penalty");
    train_cmd->add_option("--dropout", tr_cfg.dropout, "dropout rate");
    train_cmd->add_option("--batch", tr_cfg.batch, "batch size");
    train_cmd->add_option("--epochs", tr_cfg.epochs, "maximum epochs");
    train_cmd->add_option("--patience", tr_cfg.patience, "early-stop patience");
    train_cmd->add_option("--seed", tr_cfg.seed, "training seed");
    train_cmd->add_option("--workers", tr_cfg.workers, "parallel workers");
    train_cmd->add_option("--optimizer", tr_cfg.optimizer, "adam|sgd");
    train_cmd->add_option("--history", tr_history, "write per-epoch CSV here");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint and run sweeps");
    std::string ev_ckpt, ev_dataset, ev_out = "eval";
    std::string ev_sweeps = "annulus,eccentric,dilation,additivity,pentagon";
    std::string ev_annulus_r = "0.05:0.9:18", ev_offsets = "0.0,0.15,0.3,0.45,0.6";
    int ev_pentagons = 200, ev_raster = 256, ev_workers = 2;
    double ev_lambda = 1e-6;
    uint64_t ev_seed = 1;
    eval_cmd->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--dataset", ev_dataset, "dataset directory")->required();
    eval_cmd->add_option("--out", ev_out, "report directory");
    eval_cmd->add_option("--sweeps", ev_sweeps, "comma list: annulus,eccentric,dilation,additivity,pentagon,none");
    eval_cmd->add_option("--r", ev_annulus_r, "annulus sweep radii (lo:hi:count or list)");
    eval_cmd->add_option("--offsets", ev_offsets, "eccentric sweep offsets");
    eval_cmd->add_option("--pentagons", ev_pentagons, "random pentagons in the pentagon sweep");
    eval_cmd->add_option("--raster-n", ev_raster, "raster resolution for sweep shapes");
    eval_cmd->add_option("--lambda", ev_lambda, "penalty used in reported losses");
    eval_cmd->add_option("--seed", ev_seed, "sweep shape seed");
    eval_cmd->add_option("--workers", ev_workers, "parallel workers");

    // predict
    auto* pr_cmd = app.add_subcommand("predict", "predict torsion of domain or image files");
    std::string pr_ckpt;
    std::vector<std::string> pr_inputs;
    int pr_raster = 256;
    pr_cmd->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
    pr_cmd->add_option("inputs", pr_inputs, "domain or image files")->required();
    pr_cmd->add_option("--raster-n", pr_raster, "raster resolution for domain inputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_domains(gen_opts, gen_out);
        if (solve_cmd->parsed())
            return cmd_solve(solve_domain, solve_h, solve_tol, solve_jacobi, solve_csv,
                             solve_mesh);
        if (mk_cmd->parsed())
            return cmd_make_dataset(mk_gen, mk_out, mk_h, mk_raster, mk_copies, mk_split,
                                    mk_split_seed, mk_workers);
        if (train_cmd->parsed())
            return cmd_train(tr_dataset, tr_out, tr_arch, tr_input_n, tr_cfg, tr_history);
        if (eval_cmd->parsed())
            return cmd_evaluate(ev_ckpt, ev_dataset, ev_out, ev_sweeps, ev_annulus_r,
                                ev_offsets, ev_pentagons, ev_raster, ev_lambda, ev_workers,
                                ev_seed);
        if (pr_cmd->parsed()) return cmd_predict(pr_ckpt, pr_inputs, pr_raster);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
