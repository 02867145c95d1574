#include "intentcheck/explicit_io.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

namespace intentcheck::app {

std::string format_probability(double p) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%#.17g", p);
    return buffer;
}

void write_tra(std::ostream& out, const mdp::FactoredMdp& model) {
    out << "STATES " << model.num_states() << " ACTIONS " << model.actions().size() << " TRANSITIONS "
        << model.num_transitions() << '\n';
    for (std::size_t i = 0; i < model.num_states(); ++i) {
        for (const mdp::Choice& c : model.choices(mdp::to_state_id(i))) {
            for (const mdp::Transition& t : model.successors(c)) {
                out << i << ' ' << c.action << ' ' << mdp::to_index(t.target) << ' '
                    << format_probability(t.probability) << '\n';
            }
        }
    }
}

void write_lab(std::ostream& out, const mdp::FactoredMdp& model, const reach::TargetSet& target) {
    out << "#DECLARATION\ninit collision sink\n#END\n";
    for (std::size_t i = 0; i < model.num_states(); ++i) {
        const mdp::StateId id = mdp::to_state_id(i);
        std::string labels;
        if (id == model.initial()) labels += " init";
        if (target.contains(id)) labels += " collision";
        if (model.sink() && *model.sink() == id) labels += " sink";
        if (!labels.empty()) out << i << labels << '\n';
    }
}

void export_model(const std::filesystem::path& prefix, const mdp::FactoredMdp& model, const reach::TargetSet& target) {
    const auto write = [](const std::filesystem::path& path, const auto& body) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ValidationError(path.string() + ": cannot open for writing");
        body(out);
        out.flush();
        if (!out) throw ValidationError(path.string() + ": write failed");
    };
    write(std::filesystem::path(prefix.string() + ".tra"), [&](std::ostream& out) { write_tra(out, model); });
    write(std::filesystem::path(prefix.string() + ".lab"), [&](std::ostream& out) { write_lab(out, model, target); });
}

namespace {

[[noreturn]] void malformed(const std::string& name, std::size_t line, const std::string& message) {
    throw ValidationError(name + ":" + std::to_string(line) + ": " + message);
}

}  // namespace

ExplicitModel import_model(std::istream& tra, const std::string& tra_name, std::istream& lab,
                           const std::string& lab_name) {
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(tra, line)) malformed(tra_name, line_no, "missing header");
    std::size_t n = 0;
    std::size_t m = 0;
    std::size_t k = 0;
    {
        std::istringstream header(line);
        std::string w1, w2, w3;
        if (!(header >> w1 >> n >> w2 >> m >> w3 >> k) || w1 != "STATES" || w2 != "ACTIONS" || w3 != "TRANSITIONS") {
            malformed(tra_name, line_no, "expected 'STATES n ACTIONS m TRANSITIONS k'");
        }
        if (n == 0) malformed(tra_name, line_no, "model without states");
    }

    mdp::ModelParts parts;
    parts.schema = mdp::VariableSchema(
        {mdp::Variable{"state", mdp::Domain{0, static_cast<std::int32_t>(n - 1), 1}, mdp::VariableKind::peripheral}});
    for (std::size_t i = 0; i < n; ++i) parts.states.push_back(mdp::FactoredState{{static_cast<std::int32_t>(i)}});
    for (std::size_t a = 0; a < m; ++a) parts.actions.push_back("a" + std::to_string(a));
    parts.choice_start.assign(n + 1, 0);

    std::size_t last_src = 0;
    std::size_t last_action = 0;
    std::size_t last_dst = 0;
    bool first = true;
    while (std::getline(tra, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::size_t src = 0;
        std::size_t action = 0;
        std::size_t dst = 0;
        double p = 0.0;
        if (!(row >> src >> action >> dst >> p)) malformed(tra_name, line_no, "expected 'src action dst prob'");
        if (src >= n || dst >= n) malformed(tra_name, line_no, "state id out of range");
        if (action >= m) malformed(tra_name, line_no, "action index out of range");
        if (!first && std::tie(src, action, dst) <= std::tie(last_src, last_action, last_dst)) {
            malformed(tra_name, line_no, "rows must be sorted by (src, action, dst) without duplicates");
        }
        const bool new_choice = first || src != last_src || action != last_action;
        if (new_choice) {
            for (std::size_t s = first ? 0 : last_src + 1; s <= src; ++s) {
                parts.choice_start[s] = static_cast<std::uint32_t>(parts.choices.size());
            }
            const auto begin = static_cast<std::uint32_t>(parts.transitions.size());
            parts.choices.push_back(mdp::Choice{static_cast<mdp::ActionIndex>(action), begin, begin});
        }
        parts.transitions.push_back(mdp::Transition{mdp::to_state_id(dst), p});
        parts.choices.back().end = static_cast<std::uint32_t>(parts.transitions.size());
        last_src = src;
        last_action = action;
        last_dst = dst;
        first = false;
    }
    if (parts.transitions.size() != k) {
        malformed(tra_name, line_no, "header announces " + std::to_string(k) + " transitions, found " +
                                         std::to_string(parts.transitions.size()));
    }
    for (std::size_t s = first ? 0 : last_src + 1; s <= n; ++s) {
        parts.choice_start[s] = static_cast<std::uint32_t>(parts.choices.size());
    }

    std::set<std::size_t> collisions;
    std::optional<std::size_t> init;
    line_no = 0;
    bool in_declaration = false;
    while (std::getline(lab, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line == "#DECLARATION") {
            in_declaration = true;
            continue;
        }
        if (line == "#END") {
            in_declaration = false;
            continue;
        }
        if (in_declaration) continue;
        std::istringstream row(line);
        std::size_t id = 0;
        if (!(row >> id) || id >= n) malformed(lab_name, line_no, "expected a state id in range");
        std::string label;
        while (row >> label) {
            if (label == "init") init = id;
            else if (label == "collision") collisions.insert(id);
            else if (label == "sink") parts.sink = mdp::to_state_id(id);
            else malformed(lab_name, line_no, "unknown label '" + label + "'");
        }
    }
    if (!init) malformed(lab_name, line_no, "no state labelled init");
    parts.initial = mdp::to_state_id(*init);

    try {
        mdp::FactoredMdp model(std::move(parts));
        reach::TargetSet target = reach::TargetSet::from_predicate(
            model, [&](mdp::StateId id) { return collisions.count(mdp::to_index(id)) > 0; });
        return ExplicitModel{std::move(model), std::move(target)};
    } catch (const Error& e) {
        throw ValidationError(tra_name + ": " + e.what());
    }
}

ExplicitModel import_model(const std::filesystem::path& prefix) {
    const std::string tra_name = prefix.string() + ".tra";
    const std::string lab_name = prefix.string() + ".lab";
    std::ifstream tra(tra_name, std::ios::binary);
    if (!tra) throw ValidationError(tra_name + ": cannot open file");
    std::ifstream lab(lab_name, std::ios::binary);
    if (!lab) throw ValidationError(lab_name + ": cannot open file");
    return import_model(tra, tra_name, lab, lab_name);
}

}  // namespace intentcheck::app
