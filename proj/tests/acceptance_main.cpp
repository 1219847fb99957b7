// acceptance gate: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion; exit status is the failure count

#include <iostream>

#include "dctts/acceptance.hpp"

#ifndef DCTTS_SOURCE_DIR
#define DCTTS_SOURCE_DIR "."
#endif

int main(int argc, char** argv) {
    dctts::AcceptanceOptions opts;
    opts.work_dir = argc > 1 ? argv[1] : "accept_runs";
    opts.config_path = std::string(DCTTS_SOURCE_DIR) + "/data/accept.conf";
    opts.corpus_spec_path = std::string(DCTTS_SOURCE_DIR) + "/data/toy_corpus.json";
    const int failures = dctts::run_acceptance(opts, std::cout);
    return failures == 0 ? 0 : 1;
}
