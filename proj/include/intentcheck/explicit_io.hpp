#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "intentcheck/mdp.hpp"
#include "intentcheck/reachability.hpp"

namespace intentcheck::app {

/// Probability with 17 significant digits, trailing zeros kept ("%#.17g").
std::string format_probability(double p);

/// Header "STATES n ACTIONS m TRANSITIONS k", then "src action dst prob" sorted by (src, action, dst).
/// ACTIONS counts the action labels of the model.
void write_tra(std::ostream& out, const mdp::FactoredMdp& model);
/// Labels init, collision (target states) and sink, one "id label..." line per labelled state.
void write_lab(std::ostream& out, const mdp::FactoredMdp& model, const reach::TargetSet& target);

/// Writes <prefix>.tra and <prefix>.lab. Throws ValidationError when a file cannot be written.
void export_model(const std::filesystem::path& prefix, const mdp::FactoredMdp& model, const reach::TargetSet& target);

struct ExplicitModel {
    mdp::FactoredMdp mdp;
    reach::TargetSet target;
};

/// Reads the files written by export_model. States become a single variable "state" whose value
/// is the exported id. Throws ValidationError naming the file and line of malformed input.
ExplicitModel import_model(std::istream& tra, const std::string& tra_name, std::istream& lab,
                           const std::string& lab_name);
ExplicitModel import_model(const std::filesystem::path& prefix);

}  // namespace intentcheck::app
