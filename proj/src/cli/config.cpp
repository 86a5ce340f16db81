#include "imdm/cli/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "toml.hpp"

namespace imdm::cli {

namespace {

std::string join(const std::vector<std::string>& lines)
{
    std::string out;
    for (const auto& l : lines) {
        out += (out.empty() ? "" : "\n") + l;
    }
    return out;
}

// Typed access to one TOML table that records every key it was asked about,
// so leftovers can be reported as unknown.
class Reader {
public:
    Reader(const toml::table* table, std::string prefix, std::vector<std::string>& errors)
        : table_(table), prefix_(std::move(prefix)), errors_(errors)
    {
    }

    bool has(const char* key) const { return table_ && table_->contains(key); }

    template <typename Int>
    void integer(const char* key, Int& out, long long lo, long long hi = std::numeric_limits<long long>::max())
    {
        const toml::node* n = find(key);
        if (!n) {
            return;
        }
        const auto* v = n->as_integer();
        if (!v) {
            error(key, "expected an integer");
            return;
        }
        const long long x = v->get();
        if (x < lo || x > hi) {
            std::ostringstream os;
            os << "must lie in [" << lo << ", " << hi << "], got " << x;
            error(key, os.str());
            return;
        }
        out = static_cast<Int>(x);
    }

    void real(const char* key, double& out)
    {
        const toml::node* n = find(key);
        if (!n) {
            return;
        }
        if (const auto* f = n->as_floating_point()) {
            out = f->get();
        } else if (const auto* i = n->as_integer()) {
            out = static_cast<double>(i->get());
        } else {
            error(key, "expected a number");
        }
    }

    void text(const char* key, std::string& out, std::initializer_list<const char*> allowed = {})
    {
        const toml::node* n = find(key);
        if (!n) {
            return;
        }
        const auto* s = n->as_string();
        if (!s) {
            error(key, "expected a string");
            return;
        }
        if (allowed.size() > 0) {
            bool ok = false;
            std::string choices;
            for (const char* a : allowed) {
                ok = ok || s->get() == a;
                choices += (choices.empty() ? "" : ", ") + std::string(a);
            }
            if (!ok) {
                error(key, "must be one of {" + choices + "}, got \"" + s->get() + "\"");
                return;
            }
        }
        out = s->get();
    }

    const toml::array* array(const char* key)
    {
        const toml::node* n = find(key);
        if (!n) {
            return nullptr;
        }
        if (!n->as_array()) {
            error(key, "expected an array");
        }
        return n->as_array();
    }

    Reader table(const char* key)
    {
        const toml::node* n = find(key);
        if (n && !n->as_table()) {
            error(key, "expected a table");
            return Reader(nullptr, path(key), errors_);
        }
        return Reader(n ? n->as_table() : nullptr, path(key), errors_);
    }

    void finish() const
    {
        if (!table_) {
            return;
        }
        for (const auto& [k, v] : *table_) {
            if (!seen_.contains(std::string(k.str()))) {
                errors_.push_back(path(std::string(k.str()).c_str()) + ": unknown key");
            }
        }
    }

    void error(const char* key, const std::string& what) { errors_.push_back(path(key) + ": " + what); }
    std::string path(const char* key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

private:
    const toml::node* find(const char* key)
    {
        seen_.insert(key);
        return table_ ? table_->get(key) : nullptr;
    }

    const toml::table* table_;
    std::string prefix_;
    std::vector<std::string>& errors_;
    std::set<std::string> seen_;
};

void read_optimizer(Reader& r, TrainConfig& t, bool with_iterations)
{
    if (with_iterations) {
        r.integer("iterations", t.iterations, 0);
    }
    r.integer("batch_size", t.batch_size, 1, 1 << 20);
    r.real("learning_rate", t.learning_rate);
    r.real("adam_beta1", t.adam_beta1);
    r.real("adam_beta2", t.adam_beta2);
    r.real("adam_eps", t.adam_eps);
    r.integer("eval_every", t.eval_every, 1);
    r.real("log_prob_floor", t.log_prob_floor);
    r.finish();
}

template <typename F>
void check(std::vector<std::string>& errors, const std::string& section, F&& fn)
{
    try {
        fn();
    } catch (const std::exception& e) {
        errors.push_back(section + ": " + e.what());
    }
}

nlohmann::json optimizer_json(const TrainConfig& t, bool with_iterations)
{
    nlohmann::json j = {{"batch_size", t.batch_size},       {"learning_rate", t.learning_rate},
                        {"adam_beta1", t.adam_beta1},       {"adam_beta2", t.adam_beta2},
                        {"adam_eps", t.adam_eps},           {"eval_every", t.eval_every},
                        {"log_prob_floor", t.log_prob_floor}};
    if (with_iterations) {
        j["iterations"] = t.iterations;
    }
    return j;
}

const char* target_mode_name(TargetMode m)
{
    switch (m) {
    case TargetMode::exact:
        return "exact";
    case TargetMode::monte_carlo:
        return "monte_carlo";
    default:
        return "automatic";
    }
}

void insert_toml(toml::table& out, const nlohmann::json& j);

toml::array toml_array(const nlohmann::json& j)
{
    toml::array a;
    for (const auto& v : j) {
        if (v.is_array()) {
            a.push_back(toml_array(v));
        } else if (v.is_number_integer()) {
            a.push_back(v.get<std::int64_t>());
        } else if (v.is_number()) {
            a.push_back(v.get<double>());
        } else if (v.is_string()) {
            a.push_back(v.get<std::string>());
        } else if (v.is_boolean()) {
            a.push_back(v.get<bool>());
        }
    }
    return a;
}

void insert_toml(toml::table& out, const nlohmann::json& j)
{
    for (const auto& [k, v] : j.items()) {
        if (v.is_object()) {
            toml::table sub;
            insert_toml(sub, v);
            out.insert(k, std::move(sub));
        } else if (v.is_array()) {
            out.insert(k, toml_array(v));
        } else if (v.is_number_unsigned()) {
            const auto u = v.get<std::uint64_t>();
            if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
                throw std::out_of_range("to_toml: integer does not fit TOML");
            }
            out.insert(k, static_cast<std::int64_t>(u));
        } else if (v.is_number_integer()) {
            out.insert(k, v.get<std::int64_t>());
        } else if (v.is_number()) {
            out.insert(k, v.get<double>());
        } else if (v.is_string()) {
            out.insert(k, v.get<std::string>());
        } else if (v.is_boolean()) {
            out.insert(k, v.get<bool>());
        }
    }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : std::runtime_error("invalid configuration:\n" + join(diagnostics)), diagnostics_(std::move(diagnostics))
{
}

DecodeConfig RunConfig::decode_config() const
{
    DecodeConfig dc;
    dc.steps = decode.steps;
    dc.mode = model.kind;
    dc.length = model.length;
    dc.seed = seed;
    dc.schedule = schedule();
    for (const auto& [pos, tok] : decode.conditioning) {
        dc.conditioning[pos] = tok;
    }
    return dc;
}

TrainConfig RunConfig::train_config() const
{
    TrainConfig t = train;
    t.seed = seed;
    return t;
}

DistillConfig RunConfig::distill_config() const
{
    DistillConfig d = distill;
    d.sdtt.seed = seed + 1;
    d.redi.seed = seed + 2;
    return d;
}

void RunConfig::validate() const
{
    std::vector<std::string> errors;
    if (name.empty() || name.find('/') != std::string::npos) {
        errors.push_back("name: must be a non-empty string without '/'");
    }
    check(errors, "schedule", [&] { static_cast<void>(Schedule(clip_eps)); });
    check(errors, "model", [&] { model.validate(); });
    check(errors, "data", [&] { data.validate(); });
    if (data.n_data != model.n_data || data.length != model.length) {
        errors.push_back("data: shape does not match the model");
    }
    check(errors, "train", [&] { train.validate(); });
    check(errors, "distill", [&] { distill.validate(); });
    if (decode.steps < 1 || decode.n_samples < 1 || decode.workers < 1) {
        errors.push_back("decode: steps, n_samples and workers must be >= 1");
    }
    check(errors, "decode", [&] { decode_config().validate(model); });
    if (analysis.n_eps < 1 || analysis.probe_draws < 1 || analysis.capacity < 1) {
        errors.push_back("analysis: n_eps, probe_draws and capacity must be >= 1");
    }
    if (!errors.empty()) {
        throw ConfigError(std::move(errors));
    }
}

std::optional<std::uint64_t> env_seed()
{
    const char* raw = std::getenv("IMDM_SEED");
    if (!raw) {
        return std::nullopt;
    }
    const std::string s(raw);
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s[0] == '-' || *end != '\0' || errno == ERANGE ||
        v > static_cast<unsigned long long>(std::numeric_limits<std::int64_t>::max())) {
        throw ConfigError({"IMDM_SEED: expected a non-negative integer, got \"" + s + "\""});
    }
    return static_cast<std::uint64_t>(v);
}

RunConfig parse_config(const std::string& toml_text, const std::string& origin)
{
    toml::table doc;
    try {
        doc = toml::parse(toml_text, origin);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << origin << ":" << e.source().begin.line << ":" << e.source().begin.column << ": "
           << e.description();
        throw ConfigError({os.str()});
    }

    std::vector<std::string> errors;
    RunConfig c;
    Reader top(&doc, "", errors);
    top.text("name", c.name);
    top.text("output_dir", c.output_dir);
    top.integer("seed", c.seed, 0);

    {
        Reader r = top.table("schedule");
        std::string kind = "linear";
        r.text("kind", kind, {"linear"});
        r.real("clip_eps", c.clip_eps);
        r.finish();
    }
    {
        Reader r = top.table("model");
        std::string kind = "imdm";
        r.text("kind", kind, {"mdm", "imdm"});
        c.model.kind = kind == "mdm" ? ModelKind::mdm : ModelKind::imdm;
        r.integer("d_embed", c.model.d_embed, 1, 4096);
        r.integer("width", c.model.width, 1, 65536);
        r.finish();
    }
    {
        Reader r = top.table("noise");
        std::string dist = "uniform";
        r.text("distribution", dist, {"uniform", "gaussian"});
        c.model.noise.distribution = dist == "uniform" ? NoiseDistribution::uniform : NoiseDistribution::gaussian;
        r.integer("dim", c.model.noise.dim, 1, 4096);
        r.real("scale", c.model.noise.scale);
        r.finish();
    }
    {
        Reader r = top.table("data");
        std::string kind = "synthetic_pair";
        r.text("kind", kind, {"synthetic_pair", "explicit"});
        int n_data = 2, length = 2;
        r.integer("n_data", n_data, 1, 1 << 20);
        r.integer("length", length, 1, 1 << 16);
        std::vector<Sequence> seqs;
        std::vector<double> weights;
        if (const auto* a = r.array("sequences")) {
            for (const auto& row : *a) {
                Sequence s;
                const auto* ra = row.as_array();
                bool ok = ra != nullptr;
                if (ra) {
                    for (const auto& tok : *ra) {
                        ok = ok && tok.is_integer();
                        s.tokens.push_back(tok.is_integer() ? static_cast<int>(tok.as_integer()->get()) : 0);
                    }
                }
                if (!ok) {
                    r.error("sequences", "expected an array of integer arrays");
                    break;
                }
                seqs.push_back(std::move(s));
            }
        }
        if (const auto* a = r.array("weights")) {
            for (const auto& w : *a) {
                if (auto v = w.value<double>()) {
                    weights.push_back(*v);
                } else {
                    r.error("weights", "expected numbers");
                    break;
                }
            }
        }
        if (kind == "synthetic_pair") {
            if (n_data != 2 || length != 2 || r.has("sequences") || r.has("weights")) {
                r.error("kind", "synthetic_pair fixes n_data = 2, length = 2 and takes no sequences or weights");
            }
            c.data = DatasetSpec::synthetic_pair();
        } else {
            c.data.kind = DatasetSpec::Kind::explicit_list;
            c.data.n_data = n_data;
            c.data.length = length;
            c.data.sequences = std::move(seqs);
            c.data.weights = std::move(weights);
            if (c.data.weights.empty()) {
                c.data.weights.assign(c.data.sequences.size(), 1.0 / static_cast<double>(c.data.sequences.size()));
            }
        }
        c.model.n_data = c.data.n_data;
        c.model.length = c.data.length;
        r.finish();
    }
    {
        Reader r = top.table("train");
        read_optimizer(r, c.train, true);
    }
    {
        Reader r = top.table("distill");
        auto& d = c.distill;
        r.integer("rounds", d.rounds, 0, 30);
        r.integer("iterations_per_round", d.iterations_per_round, 0);
        r.integer("inner_steps", d.inner_steps, 2, 1 << 10);
        r.text("kl_direction", d.kl_direction, {"teacher_to_student"});
        r.integer("coupling_size", d.coupling_size, 0);
        r.integer("coupling_steps", d.coupling_steps, 1, 1 << 20);
        r.integer("workers", d.workers, 1, 1024);
        {
            Reader t = r.table("targets");
            std::string mode = target_mode_name(d.targets.mode);
            t.text("mode", mode, {"exact", "monte_carlo", "automatic"});
            d.targets.mode = mode == "exact"         ? TargetMode::exact
                             : mode == "monte_carlo" ? TargetMode::monte_carlo
                                                     : TargetMode::automatic;
            t.integer("mc_rollouts", d.targets.mc_rollouts, 1, 1 << 20);
            t.integer("n_eps_quad", d.targets.n_eps_quad, 1, 1 << 20);
            t.integer("exact_state_limit", d.targets.exact_state_limit, 1);
            t.integer("capacity", d.targets.capacity, 1);
            t.finish();
        }
        {
            Reader t = r.table("sdtt");
            read_optimizer(t, d.sdtt, false);
        }
        {
            Reader t = r.table("redi");
            read_optimizer(t, d.redi, true);
        }
        r.finish();
    }
    {
        Reader r = top.table("decode");
        r.integer("steps", c.decode.steps, 1, 1 << 20);
        r.integer("n_samples", c.decode.n_samples, 1, 1 << 26);
        r.integer("workers", c.decode.workers, 1, 1024);
        if (const auto* a = r.array("conditioning")) {
            for (const auto& row : *a) {
                const auto* ra = row.as_array();
                if (!ra || ra->size() != 2 || !(*ra)[0].is_integer() || !(*ra)[1].is_integer()) {
                    r.error("conditioning", "expected [position, token] integer pairs");
                    break;
                }
                c.decode.conditioning.emplace_back(static_cast<int>((*ra)[0].as_integer()->get()),
                                                   static_cast<int>((*ra)[1].as_integer()->get()));
            }
        }
        r.finish();
    }
    {
        Reader r = top.table("analysis");
        r.integer("n_eps", c.analysis.n_eps, 1, 1 << 26);
        r.integer("probe_draws", c.analysis.probe_draws, 1, 1 << 20);
        r.integer("capacity", c.analysis.capacity, 1);
        r.finish();
    }
    top.finish();
    // Cross-field checks run on whatever parsed cleanly, so one pass reports
    // every problem.
    try {
        c.validate();
    } catch (const ConfigError& e) {
        errors.insert(errors.end(), e.diagnostics().begin(), e.diagnostics().end());
    }
    if (!errors.empty()) {
        for (auto& e : errors) {
            e = origin + ": " + e;
        }
        throw ConfigError(std::move(errors));
    }
    if (const auto s = env_seed()) {
        c.seed = *s;
    }
    return c;
}

RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError({path.string() + ": cannot open"});
    }
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config(os.str(), path.string());
}

nlohmann::json to_json(const RunConfig& c)
{
    nlohmann::json j;
    j["name"] = c.name;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    j["schedule"] = {{"kind", "linear"}, {"clip_eps", c.clip_eps}};
    j["model"] = {{"kind", to_string(c.model.kind)}, {"d_embed", c.model.d_embed}, {"width", c.model.width}};
    j["noise"] = {{"distribution", to_string(c.model.noise.distribution)},
                  {"dim", c.model.noise.dim},
                  {"scale", c.model.noise.scale}};
    if (c.data.kind == DatasetSpec::Kind::synthetic_pair) {
        j["data"] = {{"kind", "synthetic_pair"}, {"n_data", 2}, {"length", 2}};
    } else {
        nlohmann::json seqs = nlohmann::json::array();
        for (const auto& s : c.data.sequences) {
            seqs.push_back(s.tokens);
        }
        j["data"] = {{"kind", "explicit"},
                     {"n_data", c.data.n_data},
                     {"length", c.data.length},
                     {"sequences", seqs},
                     {"weights", c.data.weights}};
    }
    j["train"] = optimizer_json(c.train, true);
    const auto& d = c.distill;
    j["distill"] = {{"rounds", d.rounds},
                    {"iterations_per_round", d.iterations_per_round},
                    {"inner_steps", d.inner_steps},
                    {"kl_direction", d.kl_direction},
                    {"coupling_size", d.coupling_size},
                    {"coupling_steps", d.coupling_steps},
                    {"workers", d.workers},
                    {"targets",
                     {{"mode", target_mode_name(d.targets.mode)},
                      {"mc_rollouts", d.targets.mc_rollouts},
                      {"n_eps_quad", d.targets.n_eps_quad},
                      {"exact_state_limit", d.targets.exact_state_limit},
                      {"capacity", d.targets.capacity}}},
                    {"sdtt", optimizer_json(d.sdtt, false)},
                    {"redi", optimizer_json(d.redi, true)}};
    nlohmann::json cond = nlohmann::json::array();
    for (const auto& [pos, tok] : c.decode.conditioning) {
        cond.push_back({pos, tok});
    }
    j["decode"] = {{"steps", c.decode.steps},
                   {"n_samples", c.decode.n_samples},
                   {"workers", c.decode.workers},
                   {"conditioning", cond}};
    j["analysis"] = {{"n_eps", c.analysis.n_eps},
                     {"probe_draws", c.analysis.probe_draws},
                     {"capacity", c.analysis.capacity}};
    return j;
}

std::string to_toml(const RunConfig& config)
{
    toml::table t;
    insert_toml(t, to_json(config));
    std::ostringstream os;
    os << t << "\n";
    return os.str();
}

}  // namespace imdm::cli
