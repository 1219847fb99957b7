#pragma once

#include <iosfwd>
#include <string>

namespace dctts {

struct AcceptanceOptions {
    std::string work_dir = "accept_runs";
    std::string config_path = "data/accept.conf";
    std::string corpus_spec_path = "data/toy_corpus.json";
};

// Runs the full acceptance suite: kernel/posterior exactness, schedule and
// gradient contracts, toy distribution recovery, TCLL arithmetic, the trained
// end-to-end fidelity checks, benchmark harness checks, and Griffin-Lim
// behavior. Prints one PASS/FAIL line per criterion; returns the number of
// hard failures (0 = suite passed; warnings do not fail the suite).
int run_acceptance(const AcceptanceOptions& opts, std::ostream& out);

}  // namespace dctts
