#include "intentcheck/scenario.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace intentcheck::app {

using nlohmann::json;

namespace {

/// Recursive walk over well-formed JSON text recording where each value starts.
class LineScanner {
public:
    LineScanner(std::string_view text, std::map<std::string, std::size_t>& lines) : text_(text), lines_(lines) {}

    void run() { value(""); }

private:
    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
            if (text_[pos_] == '\n') ++line_;
            ++pos_;
        }
    }

    std::string string_token() {
        std::string out;
        ++pos_;  // opening quote
        while (pos_ < text_.size() && text_[pos_] != '"') {
            if (text_[pos_] == '\\' && pos_ + 1 < text_.size()) ++pos_;
            out += text_[pos_++];
        }
        ++pos_;  // closing quote
        return out;
    }

    static std::string escape(const std::string& key) {
        std::string out;
        for (char c : key) {
            if (c == '~') out += "~0";
            else if (c == '/') out += "~1";
            else out += c;
        }
        return out;
    }

    void value(const std::string& pointer) {
        skip_ws();
        if (pos_ >= text_.size()) return;
        lines_.emplace(pointer, line_);
        const char c = text_[pos_];
        if (c == '{') {
            ++pos_;
            while (true) {
                skip_ws();
                if (pos_ >= text_.size() || text_[pos_] == '}') break;
                const std::string key = string_token();
                skip_ws();
                ++pos_;  // colon
                value(pointer + "/" + escape(key));
                skip_ws();
                if (pos_ < text_.size() && text_[pos_] == ',') ++pos_;
            }
            ++pos_;
        } else if (c == '[') {
            ++pos_;
            for (std::size_t i = 0;; ++i) {
                skip_ws();
                if (pos_ >= text_.size() || text_[pos_] == ']') break;
                value(pointer + "/" + std::to_string(i));
                skip_ws();
                if (pos_ < text_.size() && text_[pos_] == ',') ++pos_;
            }
            ++pos_;
        } else if (c == '"') {
            string_token();
        } else {
            while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
                   text_[pos_] != ',' && text_[pos_] != ']' && text_[pos_] != '}') {
                ++pos_;
            }
        }
    }

    std::string_view text_;
    std::map<std::string, std::size_t>& lines_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
};

/// Field access with "file:line: field: problem" errors.
class Reader {
public:
    explicit Reader(const Document& doc) : doc_(doc) {}

    [[noreturn]] void fail(const std::string& pointer, const std::string& message) const {
        const std::size_t line = doc_.lines.line_of(pointer);
        std::string where = doc_.source;
        if (line > 0) where += ":" + std::to_string(line);
        throw ValidationError(where + ": " + display(pointer) + ": " + message);
    }

    const json& at(const std::string& pointer) const {
        const json::json_pointer ptr(pointer);
        if (!doc_.json.contains(ptr)) fail(parent(pointer), "missing field '" + leaf(pointer) + "'");
        return doc_.json.at(ptr);
    }

    bool has(const std::string& pointer) const { return doc_.json.contains(json::json_pointer(pointer)); }

    const json& object(const std::string& pointer) const {
        const json& j = at(pointer);
        if (!j.is_object()) fail(pointer, "expected an object");
        return j;
    }

    const json& array(const std::string& pointer) const {
        const json& j = at(pointer);
        if (!j.is_array()) fail(pointer, "expected an array");
        return j;
    }

    std::string string(const std::string& pointer) const {
        const json& j = at(pointer);
        if (!j.is_string()) fail(pointer, "expected a string");
        return j.get<std::string>();
    }

    double number(const std::string& pointer) const {
        const json& j = at(pointer);
        if (!j.is_number()) fail(pointer, "expected a number");
        return j.get<double>();
    }

    std::int32_t integer(const std::string& pointer, std::int32_t lo, std::int32_t hi) const {
        const json& j = at(pointer);
        if (!j.is_number_integer()) fail(pointer, "expected an integer");
        const auto v = j.get<std::int64_t>();
        if (v < lo || v > hi) {
            fail(pointer, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + "]");
        }
        return static_cast<std::int32_t>(v);
    }

    /// Decimal on a grid of 1/scale, returned in raw units.
    std::int32_t decimal(const std::string& pointer, const mdp::Domain& domain) const {
        const double v = number(pointer);
        const double raw = v * domain.scale;
        const double rounded = std::round(raw);
        if (std::abs(raw - rounded) > 1e-6) {
            fail(pointer, "value " + format(v) + " is not a multiple of " + format(1.0 / domain.scale));
        }
        if (!domain.contains(static_cast<std::int32_t>(rounded))) {
            fail(pointer, "value " + format(v) + " outside [" + format(domain.to_real(domain.lo)) + ", " +
                              format(domain.to_real(domain.hi)) + "]");
        }
        return static_cast<std::int32_t>(rounded);
    }

    static std::string format(double v) {
        std::ostringstream out;
        out << v;
        return out.str();
    }

private:
    static std::string parent(const std::string& pointer) { return pointer.substr(0, pointer.rfind('/')); }
    static std::string leaf(const std::string& pointer) { return pointer.substr(pointer.rfind('/') + 1); }

    /// "/states/3/car/v" -> "states[3].car.v"
    static std::string display(const std::string& pointer) {
        if (pointer.empty()) return "document";
        std::string out;
        std::size_t start = 1;
        while (start <= pointer.size()) {
            const std::size_t end = std::min(pointer.find('/', start), pointer.size());
            const std::string token = pointer.substr(start, end - start);
            const bool index = !token.empty() && std::all_of(token.begin(), token.end(), [](char c) {
                return std::isdigit(static_cast<unsigned char>(c)) != 0;
            });
            if (index) out += "[" + token + "]";
            else out += (out.empty() ? "" : ".") + token;
            start = end + 1;
        }
        return out;
    }

    const Document& doc_;
};

const mdp::Domain& domain_of(const mdp::VariableSchema& schema, const char* name) {
    return schema[*schema.index_of(name)].domain;
}

}  // namespace

LineIndex::LineIndex(std::string_view text) { LineScanner(text, lines_).run(); }

std::size_t LineIndex::line_of(const std::string& pointer) const {
    std::string p = pointer;
    while (true) {
        const auto it = lines_.find(p);
        if (it != lines_.end()) return it->second;
        if (p.empty()) return 0;
        p = p.substr(0, p.rfind('/'));
    }
}

Document parse_document(std::string source, std::string_view text) {
    Document doc;
    doc.source = std::move(source);
    try {
        doc.json = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        // Translate the byte offset into a line number.
        const std::size_t offset = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n');
        throw ValidationError(doc.source + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
    }
    doc.lines = LineIndex(text);
    return doc;
}

Document load_document(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(path.string() + ": cannot open file");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_document(path.string(), buffer.str());
}

PolicyClassKind parse_policy_class(std::string_view text) {
    if (text == "no-stopping") return PolicyClassKind::no_stopping;
    if (text == "unrestricted") return PolicyClassKind::unrestricted;
    throw ValidationError("unknown policy class '" + std::string(text) + "' (expected no-stopping or unrestricted)");
}

const char* to_string(PolicyClassKind kind) {
    return kind == PolicyClassKind::no_stopping ? "no-stopping" : "unrestricted";
}

std::vector<cf::VariableSpec> reference_counterfactual_ranges() {
    return {
        cf::VariableSpec::closed_range("sl_init", 10, 30),
        cf::VariableSpec::closed_range("sl_end", 35, 55),
        cf::VariableSpec::closed_range("sl_fact", 10, 40),
        cf::VariableSpec::closed_range("h_fact", 1, 9),
        cf::VariableSpec::value_set("vis", {0, 1}),
    };
}

Scenario reference_scenario() {
    Scenario s;
    s.car_init = crosswalk::CarState{0, 8, 2};
    s.counterfactual = reference_counterfactual_ranges();
    return s;
}

Scenario parse_scenario(const Document& doc) {
    const Reader r(doc);
    const mdp::VariableSchema schema = crosswalk::crosswalk_schema();
    Scenario s;
    r.object("");

    r.object("/params");
    s.params.sl_init = r.integer("/params/sl_init", 0, crosswalk::kRoadLength);
    s.params.sl_end = r.integer("/params/sl_end", 0, crosswalk::kRoadLength);
    if (s.params.sl_init > s.params.sl_end) r.fail("/params/sl_end", "must not be smaller than sl_init");
    s.params.sl_fact_tenths = r.decimal("/params/sl_fact", domain_of(schema, "sl_fact"));
    s.params.h_fact_tenths = r.decimal("/params/h_fact", domain_of(schema, "h_fact"));
    s.params.vis = r.integer("/params/vis", 0, 1);

    r.object("/car_init");
    s.car_init.x = r.integer("/car_init/x", 0, crosswalk::kRoadLength);
    s.car_init.y = r.integer("/car_init/y", crosswalk::kCarYMin, crosswalk::kCarYMax);
    s.car_init.v = r.integer("/car_init/v", 0, crosswalk::kVelocityMax);
    r.object("/ped_init");
    s.ped_init.x = r.integer("/ped_init/x", 0, crosswalk::kRoadLength);
    s.ped_init.y = r.integer("/ped_init/y", 0, crosswalk::kRoadWidth);

    if (r.has("/thresholds")) {
        r.object("/thresholds");
        s.thresholds.rho_low = r.number("/thresholds/rho_low");
        s.thresholds.rho_high = r.number("/thresholds/rho_high");
        s.thresholds.sigma_min = r.number("/thresholds/sigma_min");
        try {
            s.thresholds.validate();
        } catch (const Error& e) {
            r.fail("/thresholds", e.what());
        }
    }
    if (r.has("/policy_class")) {
        try {
            s.policy_class = parse_policy_class(r.string("/policy_class"));
        } catch (const ValidationError& e) {
            r.fail("/policy_class", e.what());
        }
    }
    if (r.has("/collision_semantics")) {
        try {
            s.semantics = crosswalk::parse_collision_semantics(r.string("/collision_semantics"));
        } catch (const Error& e) {
            r.fail("/collision_semantics", e.what());
        }
    }
    if (r.has("/counterfactual")) {
        const json& cfj = r.object("/counterfactual");
        for (const auto& [name, entry] : cfj.items()) {
            const std::string base = "/counterfactual/" + name;
            const auto where = schema.index_of(name);
            if (!where || schema[*where].kind != mdp::VariableKind::integral) {
                r.fail(base, "not an environment parameter");
            }
            const mdp::Domain& domain = schema[*where].domain;
            auto raw = [&](const std::string& pointer) {
                return domain.scale == 1 ? r.integer(pointer, domain.lo, domain.hi) : r.decimal(pointer, domain);
            };
            // Epsilon and step are distances on the variable's grid, not values in its domain.
            const mdp::Domain span{0, domain.hi - domain.lo + 1, domain.scale};
            auto magnitude = [&](const std::string& pointer) {
                return domain.scale == 1 ? r.integer(pointer, span.lo, span.hi) : r.decimal(pointer, span);
            };
            r.object(base);
            if (entry.contains("values")) {
                std::vector<std::int32_t> values;
                const json& arr = r.array(base + "/values");
                for (std::size_t i = 0; i < arr.size(); ++i) values.push_back(raw(base + "/values/" + std::to_string(i)));
                if (values.empty()) r.fail(base + "/values", "admissible set is empty");
                s.counterfactual.push_back(cf::VariableSpec::value_set(name, std::move(values)));
                continue;
            }
            const std::int32_t step = entry.contains("step") ? magnitude(base + "/step") : 1;
            if (step <= 0) r.fail(base + "/step", "must be positive");
            if (entry.contains("epsilon")) {
                s.counterfactual.push_back(cf::VariableSpec::within_epsilon(name, magnitude(base + "/epsilon"), step));
            } else if (entry.contains("min") || entry.contains("max")) {
                const std::int32_t lo = raw(base + "/min");
                const std::int32_t hi = raw(base + "/max");
                if (lo > hi) r.fail(base, "min exceeds max");
                s.counterfactual.push_back(cf::VariableSpec::closed_range(name, lo, hi, step));
            } else {
                r.fail(base, "expected 'values', 'epsilon' or 'min'/'max'");
            }
        }
    }
    if (crosswalk::collision(s.car_init, s.ped_init, s.semantics)) {
        r.fail("/ped_init", "initial positions already collide");
    }
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) { return parse_scenario(load_document(path)); }

json to_json(const Scenario& s) {
    const mdp::VariableSchema schema = crosswalk::crosswalk_schema();
    json cfj = json::object();
    for (const auto& v : s.counterfactual) {
        const mdp::Domain& d = schema[*schema.index_of(v.name)].domain;
        auto real = [&](std::int32_t raw) { return d.scale == 1 ? json(raw) : json(d.to_real(raw)); };
        switch (v.kind) {
            case cf::VariableSpec::Kind::frozen: cfj[v.name] = {{"epsilon", 0}}; break;
            case cf::VariableSpec::Kind::epsilon:
                cfj[v.name] = {{"epsilon", real(v.epsilon)}, {"step", real(v.granularity)}};
                break;
            case cf::VariableSpec::Kind::range:
                cfj[v.name] = {{"min", real(v.lo)}, {"max", real(v.hi)}, {"step", real(v.granularity)}};
                break;
            case cf::VariableSpec::Kind::values: {
                json values = json::array();
                for (auto x : v.values) values.push_back(real(x));
                cfj[v.name] = {{"values", values}};
                break;
            }
        }
    }
    return {
        {"params",
         {{"sl_init", s.params.sl_init},
          {"sl_end", s.params.sl_end},
          {"sl_fact", s.params.sl_fact()},
          {"h_fact", s.params.h_fact()},
          {"vis", s.params.vis}}},
        {"car_init", {{"x", s.car_init.x}, {"y", s.car_init.y}, {"v", s.car_init.v}}},
        {"ped_init", {{"x", s.ped_init.x}, {"y", s.ped_init.y}}},
        {"thresholds",
         {{"rho_low", s.thresholds.rho_low},
          {"rho_high", s.thresholds.rho_high},
          {"sigma_min", s.thresholds.sigma_min}}},
        {"policy_class", to_string(s.policy_class)},
        {"collision_semantics", crosswalk::to_string(s.semantics)},
        {"counterfactual", cfj},
    };
}

std::vector<mdp::FactoredState> parse_trace(const Document& doc, const Scenario& scenario) {
    const Reader r(doc);
    r.object("");
    const json& states = r.array("/states");
    if (states.empty()) r.fail("/states", "trace is empty");
    std::vector<mdp::FactoredState> out;
    out.reserve(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
        const std::string base = "/states/" + std::to_string(i);
        r.object(base);
        r.object(base + "/car");
        r.object(base + "/ped");
        crosswalk::CrosswalkState s;
        s.car.x = r.integer(base + "/car/x", 0, crosswalk::kRoadLength);
        s.car.y = r.integer(base + "/car/y", crosswalk::kCarYMin, crosswalk::kCarYMax);
        s.car.v = r.integer(base + "/car/v", 0, crosswalk::kVelocityMax);
        s.ped.x = r.integer(base + "/ped/x", 0, crosswalk::kRoadLength);
        s.ped.y = r.integer(base + "/ped/y", 0, crosswalk::kRoadWidth);
        s.params = scenario.params;
        out.push_back(crosswalk::encode(s));
    }
    return out;
}

std::vector<mdp::FactoredState> load_trace(const std::filesystem::path& path, const Scenario& scenario) {
    return parse_trace(load_document(path), scenario);
}

json trace_to_json(const std::vector<mdp::FactoredState>& states, const std::string& scenario_ref) {
    json arr = json::array();
    for (const auto& fs : states) {
        const crosswalk::CrosswalkState s = crosswalk::decode(fs);
        arr.push_back({{"car", {{"x", s.car.x}, {"y", s.car.y}, {"v", s.car.v}}},
                       {"ped", {{"x", s.ped.x}, {"y", s.ped.y}}}});
    }
    return {{"scenario", scenario_ref}, {"states", arr}};
}

cf::ProblemBuilder make_problem_builder(const Scenario& scenario) {
    return [scenario](const std::vector<std::int32_t>& integral) {
        const crosswalk::ScenarioParams params = crosswalk::params_from_integral(integral);
        crosswalk::CrosswalkModel model =
            crosswalk::build_crosswalk_mdp(params, scenario.car_init, scenario.ped_init, scenario.semantics);
        mdp::PolicyClass policy_class = scenario.policy_class == PolicyClassKind::no_stopping
                                            ? crosswalk::no_stopping_policy_class(model.mdp)
                                            : mdp::PolicyClass::unrestricted(model.mdp);
        return cf::Problem{std::move(model.mdp), std::move(policy_class), std::move(model.target)};
    };
}

cf::Problem build_problem(const Scenario& scenario) {
    return make_problem_builder(scenario)(crosswalk::integral_values(scenario.params));
}

cf::PolicyBuilder make_policy_builder(crosswalk::AgentKind kind) {
    return [kind](const mdp::FactoredMdp& model) { return crosswalk::make_agent(kind, model); };
}

}  // namespace intentcheck::app
