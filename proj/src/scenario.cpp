#include "psafe/scenario.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace psafe {

namespace {

constexpr double DEG = PI / 180.0;

struct Value {
    enum class Kind { number, string, boolean, array } kind = Kind::number;
    double num = 0.0;
    std::string str;
    bool b = false;
    std::vector<double> arr;
    int line = 0;
};

using Table = std::map<std::string, Value>;

struct ParsedFile {
    std::string origin;
    std::map<std::string, Table> sections;
    std::vector<Table> agents;
    std::vector<int> agent_lines;
};

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
    std::ostringstream os;
    os << origin << ":" << line << ": " << msg;
    throw scenario_error(os.str());
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Strip a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') quoted = !quoted;
        if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
}

Value parse_value(const std::string& origin, int line, const std::string& raw) {
    Value v;
    v.line = line;
    std::string s = trim(raw);
    if (s.empty()) fail(origin, line, "missing value");
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"')
            fail(origin, line, "unterminated string: " + s);
        v.kind = Value::Kind::string;
        v.str = s.substr(1, s.size() - 2);
        return v;
    }
    if (s == "true" || s == "false") {
        v.kind = Value::Kind::boolean;
        v.b = s == "true";
        return v;
    }
    if (s.front() == '[') {
        if (s.back() != ']') fail(origin, line, "unterminated array: " + s);
        v.kind = Value::Kind::array;
        std::string body = s.substr(1, s.size() - 2);
        std::stringstream ss(body);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) fail(origin, line, "empty array element");
            std::size_t used = 0;
            double d = 0.0;
            try {
                d = std::stod(item, &used);
            } catch (const std::exception&) {
                fail(origin, line, "not a number in array: '" + item + "'");
            }
            if (used != item.size())
                fail(origin, line, "trailing characters in number: '" + item + "'");
            v.arr.push_back(d);
        }
        return v;
    }
    std::size_t used = 0;
    try {
        v.num = std::stod(s, &used);
    } catch (const std::exception&) {
        fail(origin, line, "not a number: '" + s + "'");
    }
    if (used != s.size()) fail(origin, line, "trailing characters in number: '" + s + "'");
    return v;
}

ParsedFile parse_file(const std::string& text, const std::string& origin) {
    ParsedFile pf;
    pf.origin = origin;
    std::stringstream ss(text);
    std::string raw;
    std::string section;
    Table* current = nullptr;
    int line = 0;
    while (std::getline(ss, raw)) {
        ++line;
        std::string s = trim(strip_comment(raw));
        if (s.empty()) continue;
        if (s.rfind("[[", 0) == 0) {
            if (s.substr(s.size() - 2) != "]]" || trim(s.substr(2, s.size() - 4)) != "agents")
                fail(origin, line, "only [[agents]] tables are supported: " + s);
            pf.agents.emplace_back();
            pf.agent_lines.push_back(line);
            current = &pf.agents.back();
            section = "agents";
            continue;
        }
        if (s.front() == '[') {
            if (s.back() != ']') fail(origin, line, "malformed section header: " + s);
            section = trim(s.substr(1, s.size() - 2));
            if (section.empty()) fail(origin, line, "empty section name");
            current = &pf.sections[section];
            continue;
        }
        std::size_t eq = s.find('=');
        if (eq == std::string::npos) fail(origin, line, "expected 'key = value': " + s);
        std::string key = trim(s.substr(0, eq));
        if (key.empty()) fail(origin, line, "empty key");
        if (!current) fail(origin, line, "key '" + key + "' outside any section");
        if (current->count(key))
            fail(origin, line, "duplicate key '" + section + "." + key + "'");
        (*current)[key] = parse_value(origin, line, s.substr(eq + 1));
    }
    return pf;
}

// --- typed access with field diagnostics -------------------------------

struct Reader {
    const ParsedFile& pf;
    // every consumed key is recorded so unknown keys can be rejected
    mutable std::map<std::string, bool> seen;

    const Value* find(const std::string& sec, const std::string& key) const {
        auto s = pf.sections.find(sec);
        if (s == pf.sections.end()) return nullptr;
        auto k = s->second.find(key);
        if (k == s->second.end()) return nullptr;
        seen[sec + "." + key] = true;
        return &k->second;
    }
    double num(const std::string& sec, const std::string& key) const {
        const Value* v = find(sec, key);
        if (!v) throw scenario_error(pf.origin + ": missing required field " + sec + "." + key);
        if (v->kind != Value::Kind::number)
            fail(pf.origin, v->line, sec + "." + key + " must be a number");
        return v->num;
    }
    double num_or(const std::string& sec, const std::string& key, double dflt) const {
        return find(sec, key) ? num(sec, key) : dflt;
    }
    std::string str_or(const std::string& sec, const std::string& key,
                       const std::string& dflt) const {
        const Value* v = find(sec, key);
        if (!v) return dflt;
        if (v->kind != Value::Kind::string)
            fail(pf.origin, v->line, sec + "." + key + " must be a quoted string");
        return v->str;
    }
    void check_known(const std::string& sec, std::initializer_list<const char*> keys) const {
        auto s = pf.sections.find(sec);
        if (s == pf.sections.end()) return;
        for (const auto& [key, v] : s->second) {
            bool ok = false;
            for (const char* k : keys) ok = ok || key == k;
            if (!ok) fail(pf.origin, v.line, "unknown field " + sec + "." + key);
        }
    }
};

Vec6 agent_vec6(const ParsedFile& pf, const Table& t, int line, const std::string& key,
                double a) {
    auto it = t.find(key);
    if (it == t.end())
        fail(pf.origin, line, "agent missing required field '" + key + "'");
    const Value& v = it->second;
    if (v.kind != Value::Kind::array || v.arr.size() != 6)
        fail(pf.origin, v.line, "agents." + key + " must be an array of 6 numbers (a*c, m)");
    Vec6 c;
    for (int i = 0; i < 6; ++i) c[i] = v.arr[size_t(i)] / a;
    return c;
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& origin) {
    ParsedFile pf = parse_file(text, origin);
    Reader r{pf, {}};
    Scenario sc;

    r.check_known("orbit", {"a_km", "e", "i_deg", "raan_deg", "argp_deg", "nu0_deg"});
    sc.cfg.oe.a = r.num("orbit", "a_km") * 1e3;
    sc.cfg.oe.e = r.num("orbit", "e");
    sc.cfg.oe.i = r.num("orbit", "i_deg") * DEG;
    sc.cfg.oe.raan = r.num_or("orbit", "raan_deg", 0.0) * DEG;
    sc.cfg.oe.argp = r.num_or("orbit", "argp_deg", 0.0) * DEG;
    sc.cfg.oe.nu0 = r.num_or("orbit", "nu0_deg", 0.0) * DEG;
    if (sc.cfg.oe.a <= 0.0 || sc.cfg.oe.e < 0.0 || sc.cfg.oe.e >= 1.0)
        throw scenario_error(origin + ": orbit.a_km/orbit.e out of range");
    const double period = sc.cfg.oe.period();

    r.check_known("transfer",
                  {"duration_orbits", "n", "m", "n_m", "control", "formulation"});
    sc.cfg.t0 = 0.0;
    sc.cfg.tf = r.num("transfer", "duration_orbits") * period;
    sc.cfg.scheme.n = long(r.num("transfer", "n"));
    sc.cfg.scheme.m = long(r.num_or("transfer", "m", 0.0));
    std::string control = r.str_or("transfer", "control", "impulsive");
    if (control == "impulsive")
        sc.cfg.scheme.control = ControlType::Impulsive;
    else if (control == "continuous")
        sc.cfg.scheme.control = ControlType::Continuous;
    else
        throw scenario_error(origin + ": transfer.control must be impulsive|continuous");
    // continuously controlled agents get a candidate impulse at every sample
    double nm_dflt = control == "continuous" ? double(sc.cfg.scheme.n) : -1.0;
    double nm = r.num_or("transfer", "n_m", nm_dflt);
    if (nm <= 0.0) throw scenario_error(origin + ": missing required field transfer.n_m");
    sc.cfg.scheme.n_M = long(nm);
    std::string form = r.str_or("transfer", "formulation", "tstar");
    if (form == "tstar")
        sc.cfg.scheme.formulation = Formulation::TStar;
    else if (form == "full")
        sc.cfg.scheme.formulation = Formulation::Full;
    else
        throw scenario_error(origin + ": transfer.formulation must be tstar|full");

    r.check_known("safety", {"eps_m", "horizon_orbits", "q_sigma", "plane"});
    sc.cfg.safety.eps_m = r.num("safety", "eps_m");
    sc.cfg.safety.horizon_s = r.num_or("safety", "horizon_orbits", 0.0) * period;
    sc.cfg.safety.q = int(r.num_or("safety", "q_sigma", 3.0));
    std::string plane = r.str_or("safety", "plane", "3d");
    if (plane == "rn")
        sc.cfg.safety.plane = Plane::RN;
    else if (plane == "rt")
        sc.cfg.safety.plane = Plane::RT;
    else if (plane == "3d")
        sc.cfg.safety.plane = Plane::ThreeD;
    else
        throw scenario_error(origin + ": safety.plane must be rn|rt|3d");

    r.check_known("model", {"kind", "mass_kg", "area_m2", "cr"});
    std::string kind = r.str_or("model", "kind", "none");
    double mass = r.num_or("model", "mass_kg", 100.0);
    double area = r.num_or("model", "area_m2", 0.0);
    double cr = r.num_or("model", "cr", 1.0);
    if (kind == "none")
        sc.cfg.model = PerturbationModel::none();
    else if (kind == "j2")
        sc.cfg.model = PerturbationModel::j2(mass, area, cr);
    else if (kind == "j2_srp")
        sc.cfg.model = PerturbationModel::j2_srp(mass, area, cr);
    else
        throw scenario_error(origin + ": model.kind must be none|j2|j2_srp");

    r.check_known("noise", {"process_m_per_orbit", "maneuver_mag_frac",
                            "maneuver_dir_arcmin", "nav_pos_sigma_m", "nav_vel_sigma_mps"});
    double proc = r.num_or("noise", "process_m_per_orbit", 0.0);
    double mag = r.num_or("noise", "maneuver_mag_frac", 0.0);
    double dir = r.num_or("noise", "maneuver_dir_arcmin", 0.0) / 60.0 * DEG;
    double pos = r.num_or("noise", "nav_pos_sigma_m", 0.0);
    double vel = r.num_or("noise", "nav_vel_sigma_mps", 0.0);
    sc.cfg.noise = NoiseModel::standard(sc.cfg.oe, proc, mag, dir, pos, vel);

    r.check_known("planner",
                  {"beta_fixed_m", "max_outer", "max_inner", "trust_init_m", "trust_min_m",
                   "samples_per_deg", "state_tol_m", "cost_rel_tol"});
    sc.cfg.beta_fixed_m = r.num_or("planner", "beta_fixed_m", -1.0);
    sc.cfg.max_outer = int(r.num_or("planner", "max_outer", sc.cfg.max_outer));
    sc.cfg.max_inner = int(r.num_or("planner", "max_inner", sc.cfg.max_inner));
    sc.cfg.trust_init_m = r.num_or("planner", "trust_init_m", sc.cfg.trust_init_m);
    sc.cfg.trust_min_m = r.num_or("planner", "trust_min_m", sc.cfg.trust_min_m);
    sc.cfg.samples_per_deg = r.num_or("planner", "samples_per_deg", sc.cfg.samples_per_deg);
    sc.cfg.state_tol_m = r.num_or("planner", "state_tol_m", sc.cfg.state_tol_m);
    sc.cfg.cost_rel_tol = r.num_or("planner", "cost_rel_tol", sc.cfg.cost_rel_tol);

    for (const auto& [name, table] : pf.sections)
        if (name != "orbit" && name != "transfer" && name != "safety" && name != "model" &&
            name != "noise" && name != "planner")
            throw scenario_error(origin + ": unknown section [" + name + "]");

    if (pf.agents.empty()) throw scenario_error(origin + ": no [[agents]] defined");
    for (std::size_t k = 0; k < pf.agents.size(); ++k) {
        const Table& t = pf.agents[k];
        int line = pf.agent_lines[k];
        for (const auto& [key, v] : t)
            if (key != "name" && key != "active" && key != "ic_m" && key != "target_m" &&
                key != "dv_cap_mps")
                fail(origin, v.line, "unknown field agents." + key);
        std::string name = "agent" + std::to_string(k);
        if (auto it = t.find("name"); it != t.end()) {
            if (it->second.kind != Value::Kind::string)
                fail(origin, it->second.line, "agents.name must be a quoted string");
            name = it->second.str;
        }
        bool is_active = true;
        if (auto it = t.find("active"); it != t.end()) {
            if (it->second.kind != Value::Kind::boolean)
                fail(origin, it->second.line, "agents.active must be true|false");
            is_active = it->second.b;
        }
        Vec6 c0 = agent_vec6(pf, t, line, "ic_m", sc.cfg.oe.a);
        if (is_active) {
            AgentTask task;
            task.c0 = c0;
            task.target = agent_vec6(pf, t, line, "target_m", sc.cfg.oe.a);
            if (auto it = t.find("dv_cap_mps"); it != t.end()) {
                if (it->second.kind != Value::Kind::number || it->second.num <= 0.0)
                    fail(origin, it->second.line, "agents.dv_cap_mps must be positive");
                task.dv_cap_mps = it->second.num;
            }
            sc.active.push_back(task);
            sc.active_names.push_back(name);
        } else {
            if (t.count("target_m"))
                fail(origin, line, "passive agent '" + name + "' cannot have target_m");
            sc.passive.push_back(c0);
            sc.passive_names.push_back(name);
        }
    }
    sc.cfg.scheme.N_a = long(sc.active.size());
    sc.cfg.scheme.N_p = long(sc.passive.size());
    try {
        sc.cfg.validate();
    } catch (const std::exception& e) {
        throw scenario_error(origin + ": " + e.what());
    }
    return sc;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw scenario_error("cannot open scenario file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario(ss.str(), path);
}

FormationPlan plan_from_json(const std::string& text, std::size_t n_agents) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw scenario_error(std::string("plan file is not valid JSON: ") + e.what());
    }
    if (!j.contains("agents") || !j["agents"].is_array())
        throw scenario_error("plan file missing 'agents' array");
    FormationPlan fp;
    for (const auto& ag : j["agents"]) {
        ManeuverPlan mp;
        for (const auto& imp : ag.value("impulses", nlohmann::json::array())) {
            Impulse m;
            m.sample = imp.at("sample").get<int>();
            auto dv = imp.at("dv_rtn_mps");
            if (!dv.is_array() || dv.size() != 3)
                throw scenario_error("impulse dv_rtn_mps must have 3 components");
            m.dv = Vec3(dv[0].get<double>(), dv[1].get<double>(), dv[2].get<double>());
            mp.push_back(m);
        }
        fp.agents.push_back(mp);
    }
    if (n_agents != 0 && fp.agents.size() != n_agents)
        throw scenario_error("plan has " + std::to_string(fp.agents.size()) +
                             " agents, scenario expects " + std::to_string(n_agents));
    return fp;
}

}  // namespace psafe
