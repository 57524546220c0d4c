// fphtc: synthetic corpora, distillation experiments, bound tables, the
// online simulation and routing-policy export/classification.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fphtc/analysis.hpp"
#include "fphtc/distillation.hpp"
#include "fphtc/error.hpp"
#include "fphtc/ingestion.hpp"
#include "fphtc/kernels.hpp"
#include "fphtc/numfmt.hpp"
#include "fphtc/online_sim.hpp"
#include "fphtc/rng.hpp"
#include "fphtc/run_config.hpp"

namespace fs = std::filesystem;
using namespace fphtc;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

RunConfig load(const Common& c) { return c.config.empty() ? RunConfig{} : load_run_config(c.config); }

fs::path out_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir);
    return dir;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw DataError("cannot write " + p.string());
    return os;
}

void close_out(std::ofstream& os, const fs::path& p) {
    os.close();
    if (!os) throw DataError("error writing " + p.string());
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    auto os = open_out(p);
    os << j.dump(2) << '\n';
    close_out(os, p);
}

struct CorpusFlags {
    std::optional<std::string> preset;
    std::optional<std::string> manifest;
};

void apply(const CorpusFlags& f, RunConfig& rc) {
    if (f.preset) rc.corpus.preset = preset(*f.preset);
    if (f.manifest) rc.corpus.manifest = *f.manifest;
}

std::optional<std::vector<Flow>> manifest_flows(const RunConfig& rc) {
    if (!rc.corpus.manifest) return std::nullopt;
    auto res = read_corpus(load_manifest(*rc.corpus.manifest));
    std::cerr << "read " << res.flows.size() << " flows from " << *rc.corpus.manifest << " (" << res.skipped_packets
              << " packets skipped, " << res.dropped_flows << " empty flows dropped)\n";
    return std::move(res.flows);
}

/// Corpus and test flows for one replica.
std::pair<std::vector<Flow>, std::vector<Flow>> replica_traffic(const RunConfig& rc,
                                                                const std::optional<std::vector<Flow>>& captured,
                                                                std::size_t n, std::size_t n_test,
                                                                std::uint64_t seed) {
    if (captured) {
        FlowDataset ds{*captured, LabelKind::Truth};
        auto [train, test] = split_dataset(ds, rc.corpus.test_fraction, seed);
        return {std::move(train.flows), std::move(test.flows)};
    }
    return {generate_synthetic(rc.corpus.preset, rc.corpus.mix, n, derive_seed(seed, 0xC0)),
            generate_synthetic(rc.corpus.preset, rc.corpus.mix, n_test, derive_seed(seed, 0x7E5))};
}

ExperimentConfig experiment(const DistillSettings& d, std::size_t n, std::uint64_t seed) {
    ExperimentConfig c;
    c.n = n;
    c.lambda = d.lambda_for(n);
    c.teacher_config = d.teacher;
    c.student_config = d.student;
    c.c_dpi = d.c_dpi;
    c.seed = seed;
    c.keep_dpi_truth = d.keep_dpi_truth;
    return c;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
    Common common;
    CorpusFlags corpus;
    std::optional<std::size_t> flows;
    std::vector<std::string> apps;
};

int cmd_synth(const SynthArgs& a) {
    RunConfig rc = load(a.common);
    apply(a.corpus, rc);
    if (a.flows) rc.corpus.flows = *a.flows;
    if (!a.apps.empty()) {
        AppMix mix;
        for (const auto& s : a.apps) {
            auto app = parse_app(s);
            if (!app) throw ConfigError("unknown application type '" + s + "'");
            mix[*app] = 1.0;
        }
        rc.corpus.mix = mix;
    }
    const std::uint64_t seed = resolve_seed(a.common.seed, rc);
    const auto flows = generate_synthetic(rc.corpus.preset, rc.corpus.mix, rc.corpus.flows, seed);

    const fs::path dir = out_dir(a.common.out);
    std::map<AppType, std::vector<Packet>> by_app;
    std::map<AppType, std::size_t> flow_count;
    for (const auto& f : flows) {
        auto& pk = by_app[*f.true_app];
        pk.insert(pk.end(), f.packets.begin(), f.packets.end());
        ++flow_count[*f.true_app];
    }
    CaptureManifest manifest;
    for (auto& [app, packets] : by_app) {
        std::stable_sort(packets.begin(), packets.end(),
                         [](const Packet& x, const Packet& y) { return x.timestamp < y.timestamp; });
        const std::string name = std::string(to_string(app)) + ".pcap";
        write_pcap((dir / name).string(), packets);
        manifest.entries.emplace_back((dir / name).string(), app);
    }
    write_manifest((dir / "manifest.tsv").string(), manifest);

    std::array<std::size_t, kClassCount> per_class{};
    std::cout << "flows " << flows.size() << " preset " << rc.corpus.preset.name << " seed " << seed << '\n';
    for (const auto& [app, count] : flow_count) {
        std::cout << "  " << to_string(app) << ' ' << count << '\n';
        per_class[static_cast<std::size_t>(encode(cos_of_app(app)))] += count;
    }
    for (CoSLabel c : kAllClasses)
        std::cout << "  " << to_string(c) << ' ' << per_class[static_cast<std::size_t>(encode(c))] << '\n';
    return 0;
}

// ---- distill ---------------------------------------------------------------

struct DistillArgs {
    Common common;
    CorpusFlags corpus;
    std::vector<std::size_t> n_grid;
    std::optional<double> lambda;
    std::optional<std::size_t> dpi_flows;
    std::optional<std::size_t> replicas;
    std::optional<std::size_t> test_flows;
};

void apply(const DistillArgs& a, DistillSettings& d) {
    if (!a.n_grid.empty()) d.n_grid = a.n_grid;
    if (a.lambda && a.dpi_flows) throw ConfigError("--lambda and --dpi-flows are mutually exclusive");
    if (a.lambda) d.lambda = *a.lambda;
    if (a.dpi_flows) d.lambda.reset(), d.dpi_flows = *a.dpi_flows;
    if (a.replicas) d.replicas = *a.replicas;
    if (a.test_flows) d.test_flows = *a.test_flows;
    d.validate();
}

int cmd_distill(const DistillArgs& a) {
    RunConfig rc = load(a.common);
    apply(a.corpus, rc);
    apply(a, rc.distill);
    const DistillSettings& d = rc.distill;
    const std::uint64_t seed = resolve_seed(a.common.seed, rc);
    const auto captured = manifest_flows(rc);
    if (d.replicas < 2) std::cerr << "warning: single replicate, confidence intervals omitted\n";

    const fs::path dir = out_dir(a.common.out);
    std::vector<ExperimentReport> reports;
    for (std::size_t n : d.n_grid) {
        for (std::size_t r = 0; r < d.replicas; ++r) {
            const std::uint64_t rs = derive_seed(seed, r);
            auto [corpus, test] = replica_traffic(rc, captured, n, d.test_flows, rs);
            reports.push_back(run_experiment(corpus, experiment(d, n, rs), test));
            const auto& rep = reports.back();
            std::cerr << "n " << n << " replica " << r << " teacher " << format_double(rep.teacher_balanced_acc)
                      << " fphtc " << format_double(rep.fphtc->balanced_acc) << " baseline "
                      << format_double(rep.baseline->balanced_acc) << '\n';
        }
    }

    {
        const fs::path p = dir / "replicas.csv";
        auto os = open_out(p);
        write_report_csv_header(os);
        for (const auto& r : reports) write_report_csv_row(os, r);
        close_out(os, p);
    }
    const auto summary = summarize_reports(reports, d.confidence_level);
    write_json(dir / "summary.json", summary);
    {
        const fs::path p = dir / "trend.csv";
        auto os = open_out(p);
        os << "n,lambda,replicas,teacher_median,fphtc_median,baseline_median,fphtc_ci_lo,fphtc_ci_hi,baseline_ci_lo,"
              "baseline_ci_hi\n";
        auto ci = [](const nlohmann::json& s, int i) {
            return s.contains("ci") ? format_double(s["ci"][i].get<double>()) : std::string();
        };
        for (const auto& pt : summary["points"]) {
            const auto& f = pt["fphtc_balanced_acc"];
            const auto& b = pt["baseline_balanced_acc"];
            os << pt["n"].get<std::size_t>() << ',' << format_double(pt["lambda"].get<double>()) << ','
               << pt["replicas"].get<std::size_t>() << ','
               << format_double(pt["teacher_balanced_acc"]["median"].get<double>()) << ','
               << format_double(f["median"].get<double>()) << ',' << format_double(b["median"].get<double>()) << ','
               << ci(f, 0) << ',' << ci(f, 1) << ',' << ci(b, 0) << ',' << ci(b, 1) << '\n';
        }
        close_out(os, p);
    }
    for (const auto& pt : summary["points"])
        std::cout << "n " << pt["n"].get<std::size_t>() << " teacher "
                  << format_double(pt["teacher_balanced_acc"]["median"].get<double>()) << " fphtc "
                  << format_double(pt["fphtc_balanced_acc"]["median"].get<double>()) << " baseline "
                  << format_double(pt["baseline_balanced_acc"]["median"].get<double>()) << '\n';
    return 0;
}

// ---- bounds ----------------------------------------------------------------

struct BoundsArgs {
    Common common;
    std::optional<long long> n;
    std::optional<double> lambda, alpha, cap_fl, cap_rp, eps_fl, eps_rp, eps_pk, K, c_dpi;
    std::optional<int> points;
};

int cmd_bounds(const BoundsArgs& a) {
    RunConfig rc = load(a.common);
    BoundParams& p = rc.bounds.params;
    auto set = [](auto& dst, const auto& src) {
        if (src) dst = *src;
    };
    set(p.n, a.n);
    set(p.lambda, a.lambda);
    set(p.alpha, a.alpha);
    set(p.cap_fl, a.cap_fl);
    set(p.cap_rp, a.cap_rp);
    set(p.eps_fl, a.eps_fl);
    set(p.eps_rp, a.eps_rp);
    set(p.eps_pk, a.eps_pk);
    set(p.K, a.K);
    set(p.c_dpi, a.c_dpi);
    set(rc.bounds.grid_points, a.points);
    p.validate();
    if (rc.bounds.grid_points < 1) throw ConfigError("--points must be >= 1");

    const fs::path dir = out_dir(a.common.out);
    const auto rows = bound_grid(p, rc.bounds.grid_points);
    {
        const fs::path path = dir / "bounds.csv";
        auto os = open_out(path);
        write_bound_csv(os, rows);
        close_out(os, path);
    }
    constexpr int kCheckPoints = 10000;
    const auto opt = optimal_lambda(p);
    const double grid = grid_argmin_lambda(p, kCheckPoints);
    const bool agrees = opt.clamped ? grid == 1.0 : std::abs(grid - opt.lambda) <= 1.0 / kCheckPoints;
    const auto out = outperformance_check(p);
    nlohmann::json j{{"lambda_star", opt.lambda},
                     {"lambda_star_unclamped", opt.unclamped},
                     {"clamped", opt.clamped},
                     {"grid_points", kCheckPoints},
                     {"grid_argmin", grid},
                     {"grid_agrees", agrees},
                     {"total_cost_at_lambda_star", total_cost(p, opt.lambda)},
                     {"at_lambda",
                      {{"lambda", p.lambda},
                       {"teacher_bound", teacher_bound(p)},
                       {"fphtc_bound", out.lhs},
                       {"packet_bound", out.rhs},
                       {"fphtc_better", out.fphtc_better}}}};
    write_json(dir / "lambda_star.json", j);
    std::cout << "lambda* " << format_double(opt.lambda) << (opt.clamped ? " (clamped to 1)" : "") << " grid argmin "
              << format_double(grid) << (agrees ? " agrees" : " DISAGREES") << '\n'
              << "at lambda " << format_double(p.lambda) << ": fphtc_bound " << format_double(out.lhs)
              << " packet_bound " << format_double(out.rhs) << (out.fphtc_better ? " fphtc better" : " packet better")
              << '\n';
    if (!agrees) throw InvariantError("closed-form lambda* disagrees with the grid argmin");
    return 0;
}

// ---- online ----------------------------------------------------------------

struct OnlineArgs {
    Common common;
    std::optional<std::string> preset;
};

int cmd_online(const OnlineArgs& a) {
    RunConfig rc = load(a.common);
    if (a.preset) rc.corpus.preset = preset(*a.preset);
    rc.online.config.seed = resolve_seed(a.common.seed, rc);
    const auto metrics = run_simulation(rc.online.schedule, rc.online.config, rc.corpus.preset);

    const fs::path dir = out_dir(a.common.out);
    {
        const fs::path p = dir / "online.csv";
        auto os = open_out(p);
        write_slot_csv(os, metrics);
        close_out(os, p);
    }
    std::size_t dpi = 0, retrain = 0;
    nlohmann::json triggers = nlohmann::json::array();
    for (const auto& m : metrics) {
        dpi += m.dpi_flows_used;
        retrain += m.retrained;
        if (m.mode == Mode::Monitoring && m.next_mode == Mode::Retraining) triggers.push_back(m.slot);
    }
    write_json(dir / "online_summary.json", {{"slots", metrics.size()},
                                             {"retraining_slots", retrain},
                                             {"dpi_flows_used", dpi},
                                             {"triggered_at", triggers},
                                             {"preset", rc.corpus.preset.name},
                                             {"seed", rc.online.config.seed}});
    for (const auto& m : metrics)
        std::cout << m.slot << ' ' << to_string(m.mode) << " fphtc " << format_double(m.fphtc_accuracy) << " baseline "
                  << format_double(m.baseline_accuracy) << '\n';
    return 0;
}

// ---- export-policy ---------------------------------------------------------

struct ExportArgs {
    Common common;
    CorpusFlags corpus;
    std::optional<std::size_t> n;
    std::optional<double> lambda;
    std::optional<std::size_t> dpi_flows;
};

int cmd_export_policy(const ExportArgs& a) {
    RunConfig rc = load(a.common);
    apply(a.corpus, rc);
    DistillSettings& d = rc.distill;
    if (a.n) d.n_grid = {*a.n};
    if (a.lambda && a.dpi_flows) throw ConfigError("--lambda and --dpi-flows are mutually exclusive");
    if (a.lambda) d.lambda = *a.lambda;
    if (a.dpi_flows) d.lambda.reset(), d.dpi_flows = *a.dpi_flows;
    d.validate();
    const std::size_t n = d.n_grid.front();
    const std::uint64_t seed = resolve_seed(a.common.seed, rc);
    const auto captured = manifest_flows(rc);
    const auto corpus = captured ? *captured
                                 : generate_synthetic(rc.corpus.preset, rc.corpus.mix, n, derive_seed(seed, 0xC0));
    const auto art = train_fphtc(corpus, experiment(d, n, seed));
    validate_partition(art.policy);

    const fs::path dir = out_dir(a.common.out);
    export_policy((dir / "policy.rules").string(), art.policy);
    save_tree((dir / "student.model").string(), art.student);
    save_model((dir / "teacher.model").string(), art.teacher);
    std::cout << "rules " << art.policy.rules.size() << " dpi flows " << art.flows_labeled << " training records "
              << art.train_records << '\n';
    return 0;
}

// ---- classify --------------------------------------------------------------

struct ClassifyArgs {
    std::string policy;
    std::string pcap;
    std::string out;
};

int cmd_classify(const ClassifyArgs& a) {
    const RoutingPolicy policy = import_policy(a.policy);
    check_volume(policy);
    const auto pcap = read_pcap(a.pcap);
    std::vector<PacketFeatures> feats;
    feats.reserve(pcap.packets.size());
    for (const auto& p : pcap.packets) feats.push_back(packet_features(p));

    const auto t0 = std::chrono::steady_clock::now();
    const auto actions = omp::match_batch(policy, feats);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ofstream file;
    if (!a.out.empty()) {
        file = open_out(a.out);
    }
    std::ostream& os = a.out.empty() ? std::cout : file;
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const Packet& p = pcap.packets[i];
        os << format_ipv4(p.src_ip) << ':' << p.src_port << ' ' << format_ipv4(p.dst_ip) << ':' << p.dst_port << " -> "
           << to_string(actions[i]) << '\n';
    }
    if (!a.out.empty()) close_out(file, a.out);
    std::cerr << "classified " << feats.size() << " packets (" << pcap.skipped << " non-TCP skipped) with "
              << policy.rules.size() << " rules";
    if (secs > 0 && !feats.empty()) std::cerr << ", " << static_cast<long long>(feats.size() / secs) << " packets/s";
    std::cerr << '\n';
    return 0;
}

void add_common(CLI::App* sub, Common& c, bool out_required = true) {
    sub->add_option("-c,--config", c.config, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "root seed (default: config, then FPHTC_SEED, then 0)");
    auto* o = sub->add_option("-o,--out", c.out, "output directory");
    if (out_required) o->required();
}

void add_corpus(CLI::App* sub, CorpusFlags& c, bool with_manifest = true) {
    sub->add_option("--preset", c.preset, "synthetic preset (separable, overlapping)");
    if (with_manifest)
        sub->add_option("--manifest", c.manifest, "capture manifest to use instead of synthetic traffic")
            ->check(CLI::ExistingFile);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Flow-to-packet distilled traffic classification"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "write a synthetic pcap corpus and manifest");
    add_common(s, synth.common);
    add_corpus(s, synth.corpus, false);
    s->add_option("--flows", synth.flows, "number of flows");
    s->add_option("--apps", synth.apps, "application types to draw from")->delimiter(',');

    DistillArgs distill;
    auto* d = app.add_subcommand("distill", "teacher/student experiment over an n-grid and seed replicas");
    add_common(d, distill.common);
    add_corpus(d, distill.corpus);
    d->add_option("--n", distill.n_grid, "student corpus sizes")->delimiter(',');
    d->add_option("--lambda", distill.lambda, "DPI-labeled fraction");
    d->add_option("--dpi-flows", distill.dpi_flows, "DPI-labeled flows (lambda = dpi_flows / n)");
    d->add_option("--replicas", distill.replicas, "seed replicas per operating point");
    d->add_option("--test-flows", distill.test_flows, "synthetic test flows per replica");

    BoundsArgs bounds;
    auto* b = app.add_subcommand("bounds", "bound and cost table with the optimal DPI fraction");
    add_common(b, bounds.common);
    b->add_option("--n", bounds.n, "student corpus size");
    b->add_option("--lambda", bounds.lambda, "DPI-labeled fraction");
    b->add_option("--alpha", bounds.alpha, "learning-rate exponent in [0.5, 1]");
    b->add_option("--cap-fl", bounds.cap_fl, "flow classifier capacity");
    b->add_option("--cap-rp", bounds.cap_rp, "routing policy capacity");
    b->add_option("--eps-fl", bounds.eps_fl, "flow classifier approximation error");
    b->add_option("--eps-rp", bounds.eps_rp, "routing policy approximation error");
    b->add_option("--eps-pk", bounds.eps_pk, "packet classifier approximation error");
    b->add_option("--K", bounds.K, "bound weight in the cost");
    b->add_option("--c-dpi", bounds.c_dpi, "DPI cost per flow");
    b->add_option("--points", bounds.points, "lambda grid points in bounds.csv");

    OnlineArgs online;
    auto* o = app.add_subcommand("online", "time-slotted simulation with retraining feedback");
    add_common(o, online.common);
    o->add_option("--preset", online.preset, "synthetic preset");

    ExportArgs exp;
    auto* e = app.add_subcommand("export-policy", "train a routing policy and write it with its models");
    add_common(e, exp.common);
    add_corpus(e, exp.corpus);
    e->add_option("--n", exp.n, "student corpus size");
    e->add_option("--lambda", exp.lambda, "DPI-labeled fraction");
    e->add_option("--dpi-flows", exp.dpi_flows, "DPI-labeled flows");

    ClassifyArgs cls;
    auto* c = app.add_subcommand("classify", "apply a routing policy to every packet of a pcap");
    c->add_option("--policy", cls.policy, "policy file")->required()->check(CLI::ExistingFile);
    c->add_option("--pcap", cls.pcap, "capture")->required()->check(CLI::ExistingFile);
    c->add_option("-o,--out", cls.out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? 0 : 1;
    }

    try {
        if (s->parsed()) return cmd_synth(synth);
        if (d->parsed()) return cmd_distill(distill);
        if (b->parsed()) return cmd_bounds(bounds);
        if (o->parsed()) return cmd_online(online);
        if (e->parsed()) return cmd_export_policy(exp);
        if (c->parsed()) return cmd_classify(cls);
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    } catch (const DataError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const InvariantError& err) {
        std::cerr << "invariant violated: " << err.what() << '\n';
        return 3;
    } catch (const fs::filesystem_error& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << '\n';
        return 3;
    }
    return 1;
}
