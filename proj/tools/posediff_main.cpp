#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "posediff/checkpoint.hpp"
#include "posediff/data.hpp"
#include "posediff/denoiser.hpp"
#include "posediff/report.hpp"
#include "posediff/solvers.hpp"

using namespace posediff;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct RunConfig {
    DenoiserConfig model;                       // D=96, L=4, H=4
    int schedule_steps = 1000;
    double beta1 = 1e-4;
    double betaT = 0.02;
    TrainConfig train;                          // epochs=100, batch=1024, lr=1e-4, ema=0.9999
    SolverConfig solver;                        // truncation=450, n_steps=450, rho=0.003
    int workers = 0;                            // 0 = hardware concurrency
    TaskParams task;
    std::string data_path;
    SyntheticGenConfig synthetic;
    std::string output_dir = "out";
};

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

SolverKind parse_solver(const std::string& s) {
    if (s == "dps") return SolverKind::dps;
    if (s == "mcg") return SolverKind::mcg;
    if (s == "pigdm") return SolverKind::pigdm;
    throw std::invalid_argument("unknown solver '" + s + "' (expected dps, mcg or pigdm)");
}

SamplerKind parse_sampler(const std::string& s) {
    if (s == "ddpm") return SamplerKind::ddpm;
    if (s == "ddim") return SamplerKind::ddim;
    throw std::invalid_argument("unknown sampler '" + s + "' (expected ddpm or ddim)");
}

NoiseKind parse_noise_kind(const std::string& s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "uniform") return NoiseKind::uniform;
    throw std::invalid_argument("unknown noise kind '" + s + "' (expected gaussian or uniform)");
}

InitKind parse_init(const std::string& s, bool& inverse_proj) {
    inverse_proj = (s == "inverse-proj");
    if (s == "random") return InitKind::random;
    if (s == "inverse-proj" || s == "measurement") return InitKind::pose;
    throw std::invalid_argument("unknown init '" + s +
                                "' (expected inverse-proj, measurement or random)");
}

RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config " + path + ": " + e.what());
    }
    if (j.contains("model")) {
        const json& m = j["model"];
        maybe(m, "dim", cfg.model.dim);
        maybe(m, "layers", cfg.model.layers);
        maybe(m, "heads", cfg.model.heads);
        maybe(m, "time_dim", cfg.model.time_dim);
    }
    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        maybe(s, "steps", cfg.schedule_steps);
        maybe(s, "beta1", cfg.beta1);
        maybe(s, "betaT", cfg.betaT);
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        maybe(t, "epochs", cfg.train.epochs);
        maybe(t, "batch_size", cfg.train.batch_size);
        maybe(t, "learning_rate", cfg.train.learning_rate);
        maybe(t, "weight_decay", cfg.train.weight_decay);
        maybe(t, "ema_ratio", cfg.train.ema_ratio);
        maybe(t, "seed", cfg.train.seed);
    }
    if (j.contains("solver")) {
        const json& s = j["solver"];
        if (s.contains("solver")) cfg.solver.solver = parse_solver(s["solver"].get<std::string>());
        if (s.contains("sampler")) {
            cfg.solver.sampler = parse_sampler(s["sampler"].get<std::string>());
        }
        maybe(s, "truncation", cfg.solver.truncation);
        maybe(s, "n_steps", cfg.solver.n_steps);
        maybe(s, "eta", cfg.solver.eta);
        maybe(s, "rho", cfg.solver.rho);
        maybe(s, "rho_schedule", cfg.solver.rho_schedule);
        maybe(s, "freeze_eps", cfg.solver.freeze_eps);
        maybe(s, "seed", cfg.solver.seed);
        maybe(s, "workers", cfg.workers);
    }
    if (j.contains("task")) {
        const json& t = j["task"];
        if (t.contains("noise_kind")) {
            cfg.task.noise_kind = parse_noise_kind(t["noise_kind"].get<std::string>());
        }
        maybe(t, "intensity", cfg.task.intensity);
        maybe(t, "mask_group", cfg.task.mask_group);
        if (t.contains("init")) {
            cfg.task.init = parse_init(t["init"].get<std::string>(), cfg.task.use_inverse_projection);
        }
    }
    if (j.contains("data")) {
        const json& d = j["data"];
        maybe(d, "path", cfg.data_path);
        if (d.contains("synthetic")) {
            const json& s = d["synthetic"];
            maybe(s, "n_poses", cfg.synthetic.n_poses);
            maybe(s, "seed", cfg.synthetic.seed);
            if (s.contains("depth_min")) {
                cfg.synthetic.trajectory_depth_range_mm.first = s["depth_min"].get<double>();
            }
            if (s.contains("depth_max")) {
                cfg.synthetic.trajectory_depth_range_mm.second = s["depth_max"].get<double>();
            }
            if (s.contains("segment_lengths_mm")) {
                auto v = s["segment_lengths_mm"].get<std::vector<double>>();
                if (v.size() != kNumBones) {
                    throw std::invalid_argument("config: segment_lengths_mm needs 16 values");
                }
                std::copy(v.begin(), v.end(), cfg.synthetic.segment_lengths_mm.begin());
            }
        }
    }
    maybe(j, "output_dir", cfg.output_dir);
    return cfg;
}

json config_echo_json(const RunConfig& cfg, const std::string& task) {
    json solver = {
        {"solver", cfg.solver.solver == SolverKind::dps    ? "dps"
                   : cfg.solver.solver == SolverKind::mcg ? "mcg"
                                                          : "pigdm"},
        {"sampler", cfg.solver.sampler == SamplerKind::ddpm ? "ddpm" : "ddim"},
        {"truncation", cfg.solver.truncation},
        {"n_steps", cfg.solver.n_steps},
        {"eta", cfg.solver.eta},
        {"rho", cfg.solver.rho},
        {"freeze_eps", cfg.solver.freeze_eps},
        {"seed", cfg.solver.seed},
    };
    json t = {
        {"noise_kind", cfg.task.noise_kind == NoiseKind::gaussian ? "gaussian" : "uniform"},
        {"intensity", cfg.task.intensity},
        {"mask_group", cfg.task.mask_group},
        {"init", cfg.task.init == InitKind::random      ? "random"
                 : cfg.task.use_inverse_projection      ? "inverse-proj"
                                                        : "measurement"},
    };
    return json{{"task", task}, {"solver", solver}, {"task_params", t}};
}

std::vector<PoseRecord> load_records(const RunConfig& cfg) {
    if (!cfg.data_path.empty()) return load_pose_file(cfg.data_path);
    return generate_synthetic_dataset(cfg.synthetic);
}

void ensure_output_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

int cmd_train(const RunConfig& cfg) {
    ensure_output_dir(cfg.output_dir);
    auto records = load_records(cfg);
    if (records.empty()) throw std::invalid_argument("training dataset is empty");
    NormalizationInfo norm = compute_normalization(records);
    Tensor dataset = normalized_dataset(records, norm.scale_mm);
    NoiseSchedule sched = build_linear_schedule(cfg.schedule_steps, cfg.beta1, cfg.betaT);

    std::cout << "training on " << records.size() << " poses, scale " << norm.scale_mm
              << " mm, dim " << cfg.model.dim << ", layers " << cfg.model.layers << "\n";
    TrainResult result = train_loop(dataset, cfg.model, cfg.train, sched, &std::cout);

    std::string loss_path = cfg.output_dir + "/train_loss.txt";
    {
        std::ofstream loss(loss_path);
        loss << "# epoch eps_mse\n";
        char buf[64];
        for (size_t e = 0; e < result.epoch_loss.size(); ++e) {
            std::snprintf(buf, sizeof(buf), "%zu %.12g\n", e + 1, result.epoch_loss[e]);
            loss << buf;
        }
        if (!loss) throw std::runtime_error("write failed for " + loss_path);
    }

    Checkpoint ckpt;
    ckpt.model = cfg.model;
    ckpt.schedule_steps = cfg.schedule_steps;
    ckpt.beta1 = cfg.beta1;
    ckpt.betaT = cfg.betaT;
    ckpt.scale_mm = norm.scale_mm;
    ckpt.params = result.params.weights;
    ckpt.ema = result.ema;
    std::string ckpt_path = cfg.output_dir + "/checkpoint.bin";
    save_checkpoint(ckpt_path, ckpt);
    std::cout << "wrote " << ckpt_path << " and " << loss_path << "\n";
    return kExitOk;
}

int cmd_solve(const RunConfig& cfg, const std::string& task_str, const std::string& ckpt_path,
              int sample_limit, int generate_count) {
    Task task = parse_task(task_str);
    if (ckpt_path.empty()) throw std::invalid_argument("solve requires --checkpoint");
    ensure_output_dir(cfg.output_dir);
    auto started = std::chrono::steady_clock::now();
    PriorModel model = make_prior(load_checkpoint(ckpt_path));

    if (task == Task::generate) {
        auto poses = unconditional_sample(model, generate_count, cfg.solver.seed,
                                          cfg.solver.sampler, cfg.solver.n_steps, cfg.solver.eta);
        std::vector<PoseRecord> records;
        records.reserve(poses.size());
        Trajectory traj;
        traj.pelvis << 0, 0, 5500;
        for (size_t i = 0; i < poses.size(); ++i) {
            PoseRecord rec;
            rec.id = static_cast<int64_t>(i);
            rec.trajectory = traj;
            rec.intrinsics = cfg.synthetic.intrinsics;
            rec.pose3d = poses[i];
            rec.pose3d.joints.rowwise() += traj.pelvis.transpose();
            records.push_back(std::move(rec));
        }
        std::string out_path = cfg.output_dir + "/generated.txt";
        save_pose_file(records, out_path);
        std::cout << "wrote " << poses.size() << " samples to " << out_path << "\n";
        return kExitOk;
    }

    // Fail fast on solver/operator mismatches before any sampling work.
    if (task == Task::estimate && cfg.solver.solver == SolverKind::mcg) {
        throw std::invalid_argument("mcg does not support the nonlinear projection operator");
    }
    cfg.solver.validate(model.sched);

    auto records = load_records(cfg);
    if (sample_limit > 0 && static_cast<size_t>(sample_limit) < records.size()) {
        records.resize(static_cast<size_t>(sample_limit));
    }
    if (records.empty()) throw std::invalid_argument("no samples to solve");
    auto problems = make_task_dataset(records, task, cfg.task, cfg.solver.seed);

    std::vector<ProblemSpec> specs;
    specs.reserve(problems.size());
    for (const auto& p : problems) specs.push_back(p.problem);
    auto results = solve_batch(model, specs, cfg.solver, cfg.workers);

    const auto& topo = SkeletonTopology::h36m17();
    Report rep;
    rep.command = "solve";
    rep.task = task_str;
    rep.seed = cfg.solver.seed;
    rep.config_echo = config_echo_json(cfg, task_str).dump();

    if (task == Task::estimate) {
        rep.columns = {"id", "mpjpe_init", "mpjpe", "pa_mpjpe", "pck150", "auc"};
        for (size_t i = 0; i < problems.size(); ++i) {
            const auto& tp = problems[i];
            double init_err = tp.problem.init_kind == InitKind::random
                                  ? std::nan("")
                                  : mpjpe(tp.problem.init, tp.gt);
            PckAuc pa = pck_auc({results[i]}, {tp.gt});
            rep.rows.push_back({static_cast<double>(tp.id),
                                std::isnan(init_err) ? 0.0 : init_err, mpjpe(results[i], tp.gt),
                                pa_mpjpe(results[i], tp.gt), pa.pck150, pa.auc});
        }
    } else if (task == Task::denoise) {
        rep.columns = {"id", "mpjpe_before", "mpjpe_after", "pa_mpjpe_after", "pck150", "auc"};
        for (size_t i = 0; i < problems.size(); ++i) {
            const auto& tp = problems[i];
            const auto& y = std::get<Measurement3D>(tp.problem.y);
            PckAuc pa = pck_auc({results[i]}, {tp.gt});
            rep.rows.push_back({static_cast<double>(tp.id), mpjpe(y.pose, tp.gt),
                                mpjpe(results[i], tp.gt), pa_mpjpe(results[i], tp.gt), pa.pck150,
                                pa.auc});
        }
    } else {
        rep.columns = {"id", "masked_mpjpe_fill", "masked_mpjpe", "mpjpe_all"};
        std::vector<int> hidden;
        for (int j : topo.part_groups.at(cfg.task.mask_group)) hidden.push_back(j);
        for (size_t i = 0; i < problems.size(); ++i) {
            const auto& tp = problems[i];
            rep.rows.push_back({static_cast<double>(tp.id),
                                mpjpe_over(tp.problem.init, tp.gt, hidden),
                                mpjpe_over(results[i], tp.gt, hidden), mpjpe(results[i], tp.gt)});
        }
    }
    rep.recompute_summary();
    rep.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    std::string report_path = cfg.output_dir + "/report_" + task_str + ".txt";
    write_report(report_path, rep);
    std::cout << "wrote " << report_path << "\n";
    for (const auto& [name, value] : rep.summary) {
        std::cout << "  " << name << " = " << value << "\n";
    }
    return kExitOk;
}

int cmd_eval(const std::vector<std::string>& paths, const std::string& out_path) {
    std::vector<Report> reports;
    reports.reserve(paths.size());
    for (const auto& p : paths) reports.push_back(load_report(p));
    std::string table = render_comparison(reports);
    std::cout << table;
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << table;
        if (!out) throw std::runtime_error("write failed for " + out_path);
    }
    return kExitOk;
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out_path) {
    auto records = generate_synthetic_dataset(cfg.synthetic);
    save_pose_file(records, out_path);
    std::cout << "wrote " << records.size() << " poses to " << out_path << "\n";
    return kExitOk;
}

int cmd_format_spec() {
    std::cout << pose_file_field_spec() << "\n";
    std::cout << "report format: '# posediff-report 1' header; '# command/task/seed/config' "
                 "metadata lines;\n'# columns' then CSV rows (12 significant digits); "
                 "'# summary <name> <mean>' per metric;\n'# wallclock_s' last (excluded from "
                 "reproducibility comparisons).\n";
    std::cout << "checkpoint format: magic PDIFCKPT, uint32 version, uint64 header length, "
                 "JSON header\n(model/schedule/normalization/tensor index), then raw "
                 "little-endian float64 tensor data.\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pose prior diffusion: train the prior, solve pose inverse problems, evaluate"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_dir, checkpoint_path, out_file;
    std::optional<uint64_t> seed;
    std::optional<int> steps, truncation, samples, workers;
    std::optional<double> rho, eta, intensity;
    std::string task_str, solver_str, sampler_str, noise_kind_str, mask_group_str, init_str;
    int generate_count = 256;
    int gen_n = -1;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seed, "seed override");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--data", data_path, "pose file to load instead of synthetic data");
    };

    CLI::App* train = app.add_subcommand("train", "train the pose prior and write a checkpoint");
    add_common(train);

    CLI::App* solve = app.add_subcommand("solve", "run a task against a trained prior");
    add_common(solve);
    solve->add_option("--task", task_str, "estimate | denoise | complete | generate")->required();
    solve->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
    solve->add_option("--solver", solver_str, "dps | mcg | pigdm");
    solve->add_option("--sampler", sampler_str, "ddpm | ddim");
    solve->add_option("--steps", steps, "denoiser evaluations");
    solve->add_option("--truncation", truncation, "reverse-chain start timestep");
    solve->add_option("--rho", rho, "likelihood guidance scale");
    solve->add_option("--eta", eta, "ddim stochasticity");
    solve->add_option("--noise-kind", noise_kind_str, "gaussian | uniform");
    solve->add_option("--intensity", intensity, "noise intensity (fraction of avg bone)");
    solve->add_option("--mask-group", mask_group_str, "part group to hide");
    solve->add_option("--init", init_str, "inverse-proj | measurement | random");
    solve->add_option("--samples", samples, "limit the number of samples");
    solve->add_option("--workers", workers, "solver worker threads");
    solve->add_option("--n", generate_count, "samples for --task generate");

    CLI::App* eval = app.add_subcommand("eval", "merge reports into a comparison table");
    std::vector<std::string> report_paths;
    eval->add_option("reports", report_paths, "report files")->required()->expected(-1);
    eval->add_option("--out", out_file, "also write the table here");

    CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic pose file");
    add_common(gen);
    gen->add_option("--n", gen_n, "number of poses");
    gen->add_option("--file", out_file, "output pose file (default <out>/poses.txt)");

    CLI::App* fmt = app.add_subcommand("format-spec", "print the file format field orders");
    (void)fmt;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        RunConfig cfg = load_config(config_path);
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (!data_path.empty()) cfg.data_path = data_path;
        if (seed) {
            cfg.train.seed = *seed;
            cfg.solver.seed = *seed;
            cfg.synthetic.seed = *seed;
        }
        if (steps) cfg.solver.n_steps = *steps;
        if (truncation) cfg.solver.truncation = *truncation;
        if (rho) cfg.solver.rho = *rho;
        if (eta) cfg.solver.eta = *eta;
        if (workers) cfg.workers = *workers;
        if (!solver_str.empty()) cfg.solver.solver = parse_solver(solver_str);
        if (!sampler_str.empty()) cfg.solver.sampler = parse_sampler(sampler_str);
        if (!noise_kind_str.empty()) cfg.task.noise_kind = parse_noise_kind(noise_kind_str);
        if (intensity) cfg.task.intensity = *intensity;
        if (!mask_group_str.empty()) cfg.task.mask_group = mask_group_str;
        if (!init_str.empty()) {
            cfg.task.init = parse_init(init_str, cfg.task.use_inverse_projection);
        }

        if (app.got_subcommand(train)) return cmd_train(cfg);
        if (app.got_subcommand(solve)) {
            return cmd_solve(cfg, task_str, checkpoint_path, samples.value_or(-1), generate_count);
        }
        if (app.got_subcommand(eval)) return cmd_eval(report_paths, out_file);
        if (app.got_subcommand(gen)) {
            if (gen_n > 0) cfg.synthetic.n_poses = gen_n;
            std::string path = out_file;
            if (path.empty()) {
                ensure_output_dir(cfg.output_dir);
                path = cfg.output_dir + "/poses.txt";
            }
            return cmd_gen_data(cfg, path);
        }
        return cmd_format_spec();
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
