#include "fphtc/run_config.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "fphtc/error.hpp"
#include "fphtc/numfmt.hpp"

namespace fphtc {

namespace {

using nlohmann::json;

ConfigError at_error(const std::string& at, const std::string& msg) {
    return ConfigError((at.empty() ? std::string("/") : at) + ": " + msg);
}

/// Object reader that rejects keys nobody asked about.
class Fields {
public:
    Fields(const json& j, std::string at) : j_(j), at_(std::move(at)) {
        if (!j_.is_object()) throw at_error(at_, "expected an object");
    }

    bool has(const char* key) {
        known_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }
    const json& raw(const char* key) { return known_.insert(key), j_.at(key); }
    std::string path(const char* key) const { return at_ + "/" + key; }

    template <class T>
    void read(const char* key, T& out) {
        if (has(key)) out = get<T>(raw(key), path(key));
    }
    template <class T>
    void read(const char* key, std::optional<T>& out) {
        known_.insert(key);
        if (!j_.contains(key)) return;
        if (j_.at(key).is_null()) out.reset();
        else out = get<T>(j_.at(key), path(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!known_.count(k)) throw at_error(at_ + "/" + k, "unknown field");
    }

    template <class T>
    static T get(const json& v, const std::string& at) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw at_error(at, "expected true or false");
            return v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw at_error(at, "expected an integer");
            if constexpr (std::is_unsigned_v<T>)
                if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
                    throw at_error(at, "expected a nonnegative integer");
            return v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw at_error(at, "expected a number");
            return v.get<T>();
        } else {
            if (!v.is_string()) throw at_error(at, "expected a string");
            return v.get<std::string>();
        }
    }

private:
    const json& j_;
    std::string at_;
    std::set<std::string> known_;
};

template <class Fn>
void rethrow_at(const std::string& at, Fn&& fn) {
    try {
        fn();
    } catch (const ConfigError& e) {
        throw at_error(at, e.what());
    }
}

AppMix mix_from_json(const json& j, const std::string& at) {
    AppMix mix;
    if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            auto app = j[i].is_string() ? parse_app(j[i].get<std::string>()) : std::nullopt;
            if (!app) throw at_error(at + "/" + std::to_string(i), "unknown application type");
            mix[*app] = 1.0;
        }
    } else if (j.is_object()) {
        for (const auto& [k, v] : j.items()) {
            auto app = parse_app(k);
            if (!app) throw at_error(at + "/" + k, "unknown application type");
            mix[*app] = Fields::get<double>(v, at + "/" + k);
        }
    } else {
        throw at_error(at, "expected a list of application types or an object of weights");
    }
    if (mix.empty()) throw at_error(at, "no applications");
    return mix;
}

void read_corpus(const json& j, const std::string& at, const std::string& base_dir, CorpusSettings& c) {
    Fields f(j, at);
    if (f.has("preset")) {
        const json& p = f.raw("preset");
        if (p.is_string()) rethrow_at(f.path("preset"), [&] { c.preset = preset(p.get<std::string>()); });
        else c.preset = preset_from_json(p, f.path("preset"));
    }
    if (f.has("apps")) c.mix = mix_from_json(f.raw("apps"), f.path("apps"));
    f.read("flows", c.flows);
    if (c.flows < 1) throw at_error(f.path("flows"), "must be >= 1");
    std::optional<std::string> manifest;
    f.read("manifest", manifest);
    if (manifest) {
        std::filesystem::path mp(*manifest);
        if (mp.is_relative() && !base_dir.empty()) mp = std::filesystem::path(base_dir) / mp;
        c.manifest = mp.string();
    }
    f.read("test_fraction", c.test_fraction);
    if (!(c.test_fraction > 0 && c.test_fraction < 1)) throw at_error(f.path("test_fraction"), "must lie in (0,1)");
    f.finish();
}

void read_distill(const json& j, const std::string& at, DistillSettings& d) {
    Fields f(j, at);
    if (f.has("n_grid")) {
        const json& g = f.raw("n_grid");
        if (!g.is_array() || g.empty()) throw at_error(f.path("n_grid"), "expected a nonempty array");
        d.n_grid.clear();
        for (std::size_t i = 0; i < g.size(); ++i)
            d.n_grid.push_back(Fields::get<std::size_t>(g[i], f.path("n_grid") + "/" + std::to_string(i)));
    }
    f.read("lambda", d.lambda);
    f.read("dpi_flows", d.dpi_flows);
    f.read("replicas", d.replicas);
    f.read("test_flows", d.test_flows);
    f.read("c_dpi", d.c_dpi);
    f.read("keep_dpi_truth", d.keep_dpi_truth);
    f.read("confidence_level", d.confidence_level);
    if (f.has("teacher")) d.teacher = gbdt_config_from_json(f.raw("teacher"), f.path("teacher"));
    if (f.has("student")) d.student = cart_config_from_json(f.raw("student"), f.path("student"));
    f.finish();
    rethrow_at(at, [&] { d.validate(); });
}

void read_bounds(const json& j, const std::string& at, BoundsSettings& b) {
    Fields f(j, at);
    BoundParams& p = b.params;
    f.read("n", p.n);
    f.read("lambda", p.lambda);
    f.read("alpha", p.alpha);
    f.read("cap_fl", p.cap_fl);
    f.read("cap_rp", p.cap_rp);
    f.read("eps_fl", p.eps_fl);
    f.read("eps_rp", p.eps_rp);
    f.read("eps_pk", p.eps_pk);
    f.read("K", p.K);
    f.read("c_dpi", p.c_dpi);
    f.read("grid_points", b.grid_points);
    f.finish();
    rethrow_at(at, [&] { p.validate(); });
    if (b.grid_points < 1) throw at_error(f.path("grid_points"), "must be >= 1");
}

void read_online(const json& j, const std::string& at, OnlineSettings& o) {
    Fields f(j, at);
    OnlineConfig& c = o.config;
    f.read("accuracy_threshold", c.accuracy_threshold);
    f.read("saturation_threshold", c.saturation_threshold);
    f.read("dpi_flows_per_slot", c.dpi_flows_per_slot);
    f.read("teacher_labeled_flows", c.teacher_labeled_flows);
    f.read("test_flows_per_slot", c.test_flows_per_slot);
    if (f.has("teacher")) c.teacher_config = gbdt_config_from_json(f.raw("teacher"), f.path("teacher"));
    if (f.has("student")) c.student_config = cart_config_from_json(f.raw("student"), f.path("student"));
    if (f.has("schedule")) o.schedule = schedule_from_json(f.raw("schedule"), f.path("schedule"));
    f.finish();
    rethrow_at(at, [&] {
        c.validate();
        o.schedule.validate();
    });
}

} // namespace

double DistillSettings::lambda_for(std::size_t n) const {
    const double l = lambda ? *lambda : static_cast<double>(dpi_flows) / static_cast<double>(n);
    if (!(l > 0 && l <= 1))
        throw ConfigError("lambda = " + format_double(l) + " at n = " + std::to_string(n) + " is outside (0,1]");
    return l;
}

void DistillSettings::validate() const {
    if (n_grid.empty()) throw ConfigError("n_grid is empty");
    for (std::size_t n : n_grid)
        if (n < 1) throw ConfigError("n_grid entries must be >= 1");
    if (!lambda && dpi_flows < 1) throw ConfigError("dpi_flows must be >= 1");
    for (std::size_t n : n_grid) lambda_for(n);
    if (replicas < 1) throw ConfigError("replicas must be >= 1");
    if (test_flows < 1) throw ConfigError("test_flows must be >= 1");
    if (!(c_dpi >= 0) || !std::isfinite(c_dpi)) throw ConfigError("c_dpi must be >= 0");
    if (!(confidence_level > 0 && confidence_level < 1)) throw ConfigError("confidence_level must lie in (0,1)");
    teacher.validate();
    student.validate();
}

RunConfig::RunConfig() {
    corpus.preset = preset("separable");
    corpus.mix = uniform_mix(kAllApps);
}

json gbdt_config_to_json(const GbdtConfig& c) {
    return {{"rounds", c.n_rounds},         {"learning_rate", c.learning_rate}, {"max_depth", c.max_depth},
            {"min_child_weight", c.min_child_weight}, {"l2_reg", c.l2_reg}, {"max_leaves", c.max_leaves}};
}

GbdtConfig gbdt_config_from_json(const json& j, const std::string& where) {
    Fields f(j, where);
    GbdtConfig c;
    if (f.has("preset")) {
        const auto name = Fields::get<std::string>(f.raw("preset"), f.path("preset"));
        if (name == "standard") c = GbdtConfig::standard();
        else if (name == "leafwise") c = GbdtConfig::leafwise();
        else throw at_error(f.path("preset"), "unknown teacher preset (available: standard leafwise)");
    }
    f.read("rounds", c.n_rounds);
    f.read("learning_rate", c.learning_rate);
    f.read("max_depth", c.max_depth);
    f.read("min_child_weight", c.min_child_weight);
    f.read("l2_reg", c.l2_reg);
    f.read("max_leaves", c.max_leaves);
    f.finish();
    rethrow_at(where, [&] { c.validate(); });
    return c;
}

json cart_config_to_json(const CartConfig& c) {
    json j;
    j["max_depth"] = c.max_depth ? json(*c.max_depth) : json(nullptr);
    j["max_leaf_nodes"] = c.max_leaf_nodes ? json(*c.max_leaf_nodes) : json(nullptr);
    j["min_samples_split"] = c.min_samples_split;
    return j;
}

CartConfig cart_config_from_json(const json& j, const std::string& where) {
    Fields f(j, where);
    CartConfig c;
    f.read("max_depth", c.max_depth);
    f.read("max_leaf_nodes", c.max_leaf_nodes);
    f.read("min_samples_split", c.min_samples_split);
    f.finish();
    rethrow_at(where, [&] { c.validate(); });
    return c;
}

RunConfig run_config_from_json(const json& j, const std::string& base_dir) {
    RunConfig rc;
    Fields f(j, "");
    if (f.has("seed")) rc.seed = Fields::get<std::uint64_t>(f.raw("seed"), "/seed");
    if (f.has("corpus")) read_corpus(f.raw("corpus"), "/corpus", base_dir, rc.corpus);
    if (f.has("distill")) read_distill(f.raw("distill"), "/distill", rc.distill);
    if (f.has("bounds")) read_bounds(f.raw("bounds"), "/bounds", rc.bounds);
    if (f.has("online")) read_online(f.raw("online"), "/online", rc.online);
    f.finish();
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    const auto dir = std::filesystem::path(path).parent_path().string();
    try {
        return run_config_from_json(j, dir);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::uint64_t parse_seed(const std::string& text, const std::string& source) {
    auto v = parse_int<std::uint64_t>(text);
    if (!v) throw ConfigError(source + ": seed '" + text + "' is not a nonnegative integer");
    return *v;
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, const RunConfig& cfg) {
    if (flag) return *flag;
    if (cfg.seed) return *cfg.seed;
    if (const char* env = std::getenv("FPHTC_SEED"); env && *env) return parse_seed(env, "FPHTC_SEED");
    return 0;
}

} // namespace fphtc
