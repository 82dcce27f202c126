#include "ehcama/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ehcama/checkpoint.hpp"
#include "ehcama/errors.hpp"

namespace ehcama::harness {

namespace fs = std::filesystem;

namespace {
constexpr std::uint64_t kRandomActions = 0x72616E646F6D0000ULL;
}
using nlohmann::json;

namespace {

std::ofstream open_output(const fs::path &path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out.precision(17);
    return out;
}

void write_json(const fs::path &path, const json &j) {
    std::ofstream out = open_output(path);
    out << j.dump(2) << '\n';
}

json config_json(const train::TrainerConfig &config) {
    json j = json::object();
    std::istringstream in(train::format_config(config));
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return j;
}

train::TrainerConfig config_from_json(const json &j) {
    train::TrainerConfig c;
    for (const auto &[key, value] : j.items()) train::set_config_value(c, key, value.get<std::string>());
    c.validate();
    return c;
}

std::string checkpoint_name(std::size_t episode) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "episode_%06zu.ckpt", episode);
    return buf;
}

json summary_json(const Summary &s) { return {{"mean", s.mean}, {"std", s.std}}; }

Summary summary_from(const json &j) { return {j.at("mean").get<double>(), j.at("std").get<double>()}; }

json metrics_json(const env::Metrics &m) {
    return {{"C", m.coverage}, {"F", m.fairness}, {"E", m.energy}, {"CFE", m.cfe}};
}

env::Metrics metrics_from(const json &j) {
    env::Metrics m;
    m.coverage = j.at("C").get<double>();
    m.fairness = j.at("F").get<double>();
    m.energy = j.at("E").get<double>();
    m.cfe = j.at("CFE").get<double>();
    return m;
}

} // namespace

// ---- manifest ------------------------------------------------------------

json RunManifest::to_json() const {
    json j;
    j["schema"] = kManifestSchema;
    j["code_version"] = code_version;
    j["variant"] = train::to_string(config.variant);
    j["alpha"] = config.effective_alpha();
    j["rng_seed"] = config.rng_seed;
    j["config"] = config_json(config);
    j["out_dir"] = out_dir.string();
    j["curve_csv"] = curve_csv.string();
    j["eval_curve_csv"] = eval_curve_csv.string();
    json ckpts = json::array();
    for (const fs::path &p : checkpoints) ckpts.push_back(p.string());
    j["checkpoints"] = ckpts;
    return j;
}

RunManifest RunManifest::from_json(const json &j) {
    if (j.at("schema").get<std::string>() != kManifestSchema) {
        throw ConfigError("unsupported manifest schema " + j.at("schema").dump());
    }
    RunManifest m;
    m.code_version = j.at("code_version").get<std::string>();
    m.config = config_from_json(j.at("config"));
    m.out_dir = j.at("out_dir").get<std::string>();
    m.curve_csv = j.at("curve_csv").get<std::string>();
    m.eval_curve_csv = j.at("eval_curve_csv").get<std::string>();
    for (const auto &p : j.at("checkpoints")) m.checkpoints.emplace_back(p.get<std::string>());
    return m;
}

train::TrainerConfig resolve_config(const std::optional<fs::path> &config_path, const Overrides &overrides) {
    train::TrainerConfig c = config_path ? train::load_config(config_path->string()) : train::TrainerConfig{};
    if (overrides.seed) c.rng_seed = *overrides.seed;
    if (overrides.uavs) c.world.n_uavs = *overrides.uavs;
    if (overrides.pois) c.world.n_pois = *overrides.pois;
    if (overrides.episodes) c.total_episodes = *overrides.episodes;
    if (overrides.variant) c.variant = *overrides.variant;
    for (const std::string &a : overrides.assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + a + "'");
        train::set_config_value(c, a.substr(0, eq), a.substr(eq + 1));
    }
    c.validate();
    return c;
}

// ---- training ------------------------------------------------------------

RunManifest cmd_train(const train::TrainerConfig &config, const fs::path &out_dir, std::ostream *log) {
    config.validate();
    fs::create_directories(out_dir / "checkpoints");

    RunManifest manifest;
    manifest.config = config;
    manifest.out_dir = out_dir;
    manifest.curve_csv = "curve.csv";
    manifest.eval_curve_csv = "eval_curve.csv";
    {
        std::ofstream cfg = open_output(out_dir / "config.txt");
        cfg << train::format_config(config);
    }
    write_json(out_dir / "manifest.json", manifest.to_json());

    std::ofstream curve = open_output(out_dir / manifest.curve_csv);
    curve << train::curve_csv_header() << '\n';
    std::ofstream eval_curve = open_output(out_dir / manifest.eval_curve_csv);
    eval_curve << "episode,mean_reward,C,F,E,CFE\n";

    train::Trainer trainer(config);
    train::TrainHooks hooks;
    hooks.on_episode = [&](const train::CurveRecord &r) {
        curve << train::curve_csv_row(r) << '\n';
        if (log && (r.episode + 1) % 100 == 0) {
            *log << "episode " << r.episode + 1 << "/" << config.total_episodes << " reward " << r.mean_reward
                 << " CFE " << r.metrics.cfe << " (" << std::fixed << std::setprecision(1) << r.wall_time << "s)"
                 << std::defaultfloat << std::setprecision(6) << std::endl;
        }
    };
    hooks.on_eval = [&](const train::EvalRecord &r) {
        eval_curve << r.episode << ',' << r.mean_reward << ',' << r.metrics.coverage << ',' << r.metrics.fairness
                   << ',' << r.metrics.energy << ',' << r.metrics.cfe << '\n';
    };
    hooks.on_checkpoint = [&](std::size_t episode) {
        const fs::path rel = fs::path("checkpoints") / checkpoint_name(episode);
        nets::save_checkpoint(out_dir / rel, trainer.checkpoint());
        manifest.checkpoints.push_back(rel);
    };
    trainer.train(hooks);

    curve.close();
    eval_curve.close();
    write_json(out_dir / "manifest.json", manifest.to_json());
    return manifest;
}

// ---- evaluation ----------------------------------------------------------

Summary summarize(std::span<const double> values) {
    Summary s;
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

void finalize(EvalReport &report) {
    std::vector<double> r, c, f, e, cfe;
    for (const EpisodeResult &ep : report.episodes) {
        r.push_back(ep.mean_reward);
        c.push_back(ep.metrics.coverage);
        f.push_back(ep.metrics.fairness);
        e.push_back(ep.metrics.energy);
        cfe.push_back(ep.metrics.cfe);
    }
    report.reward = summarize(r);
    report.coverage = summarize(c);
    report.fairness = summarize(f);
    report.energy = summarize(e);
    report.cfe = summarize(cfe);
}

EvalReport evaluate_actor(nets::ActorParams &actor, const env::WorldConfig &world, std::size_t episodes,
                          std::uint64_t seed, std::ostream *trace) {
    std::optional<env::TraceWriter> writer;
    if (trace) writer.emplace(*trace);
    train::GreedyPolicy policy(actor);
    const train::ActionFn fn = [&policy](const GraphSnapshot &s, std::size_t t) { return policy(s, t); };
    EvalReport report;
    report.n_eval = world.n_uavs;
    report.n_pois = world.n_pois;
    report.seed = seed;
    for (std::size_t k = 0; k < episodes; ++k) {
        const std::uint64_t s = train::eval_seed(seed, k);
        const train::EpisodeStats stats = train::run_episode(world, s, fn, writer ? &*writer : nullptr, k);
        report.episodes.push_back({s, stats.mean_reward, stats.metrics});
    }
    finalize(report);
    return report;
}

EvalReport evaluate_random(const env::WorldConfig &world, std::size_t episodes, std::uint64_t seed) {
    EvalReport report;
    report.variant = "random";
    report.checkpoint_id = "none";
    report.n_train = 0;
    report.n_eval = world.n_uavs;
    report.n_pois = world.n_pois;
    report.seed = seed;
    for (std::size_t k = 0; k < episodes; ++k) {
        const std::uint64_t s = train::eval_seed(seed, k);
        const train::EpisodeStats stats = train::run_episode(world, s, train::random_policy(s ^ kRandomActions));
        report.episodes.push_back({s, stats.mean_reward, stats.metrics});
    }
    finalize(report);
    return report;
}

namespace {

struct LoadedPolicy {
    train::TrainerConfig config;
    nets::ActorParams actor;
    std::size_t n_train = 0;
    std::string id;
};

LoadedPolicy load_policy(const fs::path &path) {
    const nets::Checkpoint ckpt = nets::load_checkpoint(path);
    LoadedPolicy p;
    p.config = train::parse_config(ckpt.meta("config"));
    const nets::NetConfig stored = nets::read_net_config(ckpt);
    const nets::NetConfig expected = p.config.net_config();
    if (stored.uav_state_dim != expected.uav_state_dim || stored.poi_state_dim != expected.poi_state_dim ||
        stored.action_dim != expected.action_dim) {
        throw ConfigError("checkpoint " + path.string() + " is incompatible with the UAV/PoI group spec (state dims " +
                          std::to_string(stored.uav_state_dim) + "/" + std::to_string(stored.poi_state_dim) +
                          ", action dim " + std::to_string(stored.action_dim) + ")");
    }
    p.actor = nets::make_actor(stored, 0);
    ckpt.restore("actor", p.actor.parameters());
    p.n_train = std::stoull(ckpt.meta("n_uavs_train"));
    p.id = path.stem().string();
    return p;
}

EvalReport evaluate_loaded(LoadedPolicy &policy, std::size_t n_uavs, const EvalOptions &options) {
    env::WorldConfig world = policy.config.world;
    world.n_uavs = n_uavs;
    if (options.n_pois > 0) world.n_pois = options.n_pois;
    world.validate();
    std::ofstream trace;
    if (options.trace_path) trace = open_output(*options.trace_path);
    EvalReport r = evaluate_actor(policy.actor, world, options.episodes, options.seed,
                                  options.trace_path ? &trace : nullptr);
    r.variant = train::to_string(policy.config.variant);
    r.checkpoint_id = policy.id;
    r.n_train = policy.n_train;
    return r;
}

} // namespace

EvalReport cmd_eval(const fs::path &checkpoint, const EvalOptions &options) {
    LoadedPolicy policy = load_policy(checkpoint);
    return evaluate_loaded(policy, options.n_uavs > 0 ? options.n_uavs : policy.n_train, options);
}

std::vector<EvalReport> cmd_transfer(const fs::path &checkpoint, std::span<const std::size_t> n_evals,
                                     const EvalOptions &options) {
    LoadedPolicy policy = load_policy(checkpoint);
    std::vector<EvalReport> out;
    for (std::size_t n : n_evals) {
        EvalOptions o = options;
        if (o.trace_path) {
            fs::path p = *o.trace_path;
            p.replace_filename(p.stem().string() + "_n" + std::to_string(n) + p.extension().string());
            o.trace_path = p;
        }
        out.push_back(evaluate_loaded(policy, n, o));
    }
    return out;
}

json EvalReport::to_json() const {
    json j;
    j["schema"] = kReportSchema;
    j["variant"] = variant;
    j["checkpoint_id"] = checkpoint_id;
    j["n_train"] = n_train;
    j["n_eval"] = n_eval;
    j["n_pois"] = n_pois;
    j["seed"] = seed;
    j["reward"] = summary_json(reward);
    j["C"] = summary_json(coverage);
    j["F"] = summary_json(fairness);
    j["E"] = summary_json(energy);
    j["CFE"] = summary_json(cfe);
    json eps = json::array();
    for (const EpisodeResult &e : episodes) {
        json row = metrics_json(e.metrics);
        row["seed"] = e.seed;
        row["mean_reward"] = e.mean_reward;
        eps.push_back(row);
    }
    j["episodes"] = eps;
    return j;
}

EvalReport EvalReport::from_json(const json &j) {
    if (j.at("schema").get<std::string>() != kReportSchema) {
        throw ConfigError("unsupported report schema " + j.at("schema").dump());
    }
    EvalReport r;
    r.variant = j.at("variant").get<std::string>();
    r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    r.n_train = j.at("n_train").get<std::size_t>();
    r.n_eval = j.at("n_eval").get<std::size_t>();
    r.n_pois = j.at("n_pois").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.reward = summary_from(j.at("reward"));
    r.coverage = summary_from(j.at("C"));
    r.fairness = summary_from(j.at("F"));
    r.energy = summary_from(j.at("E"));
    r.cfe = summary_from(j.at("CFE"));
    for (const json &e : j.at("episodes")) {
        r.episodes.push_back({e.at("seed").get<std::uint64_t>(), e.at("mean_reward").get<double>(), metrics_from(e)});
    }
    return r;
}

// ---- reports -------------------------------------------------------------

std::string report_csv_header() {
    return "variant,n_train,n_eval,seed,checkpoint,episodes,reward_mean,reward_std,C_mean,C_std,F_mean,F_std,"
           "E_mean,E_std,CFE_mean,CFE_std";
}

std::string report_csv(std::span<const EvalReport> reports) {
    std::ostringstream os;
    os.precision(17);
    os << report_csv_header() << '\n';
    for (const EvalReport &r : reports) {
        os << r.variant << ',' << r.n_train << ',' << r.n_eval << ',' << r.seed << ',' << r.checkpoint_id << ','
           << r.episodes.size();
        for (const Summary *s : {&r.reward, &r.coverage, &r.fairness, &r.energy, &r.cfe}) {
            os << ',' << s->mean << ',' << s->std;
        }
        os << '\n';
    }
    return os.str();
}

json report_json(std::span<const EvalReport> reports) {
    json rows = json::array();
    for (const EvalReport &r : reports) {
        rows.push_back({{"variant", r.variant},
                        {"n_train", r.n_train},
                        {"n_eval", r.n_eval},
                        {"seed", r.seed},
                        {"checkpoint", r.checkpoint_id},
                        {"episodes", r.episodes.size()},
                        {"reward", summary_json(r.reward)},
                        {"C", summary_json(r.coverage)},
                        {"F", summary_json(r.fairness)},
                        {"E", summary_json(r.energy)},
                        {"CFE", summary_json(r.cfe)}});
    }
    return {{"schema", kReportSchema}, {"rows", rows}};
}

std::vector<ReportRow> parse_report_csv(const std::string &text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != report_csv_header()) throw ConfigError("report CSV: unexpected header");
    std::vector<ReportRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 16) throw ConfigError("report CSV: expected 16 columns, got " + std::to_string(cells.size()));
        ReportRow r;
        r.variant = cells[0];
        r.n_train = std::stoull(cells[1]);
        r.n_eval = std::stoull(cells[2]);
        r.seed = std::stoull(cells[3]);
        r.checkpoint_id = cells[4];
        r.episodes = std::stoull(cells[5]);
        Summary *targets[] = {&r.reward, &r.coverage, &r.fairness, &r.energy, &r.cfe};
        for (std::size_t k = 0; k < 5; ++k) {
            targets[k]->mean = std::stod(cells[6 + 2 * k]);
            targets[k]->std = std::stod(cells[7 + 2 * k]);
        }
        rows.push_back(r);
    }
    return rows;
}

void emit_report(std::span<const EvalReport> reports, const fs::path &out_dir) {
    if (reports.empty()) throw ContractViolation("emit_report: no reports");
    fs::create_directories(out_dir);
    {
        std::ofstream csv = open_output(out_dir / "report.csv");
        csv << report_csv(reports);
    }
    write_json(out_dir / "report.json", report_json(reports));
}

} // namespace ehcama::harness
