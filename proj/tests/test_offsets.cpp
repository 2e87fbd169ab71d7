#include <doctest.h>

#include <chrono>
#include <cstdio>

#include "miccal/offsets.hpp"
#include "miccal/sim.hpp"

using namespace miccal;

namespace {

// True offsets present in the candidate set within relative tolerance.
bool contains_truth(const std::vector<Eigen::VectorXd>& candidates,
                    const Eigen::VectorXd& truth, double rel_tol = 1e-6) {
  for (const auto& c : candidates) {
    if ((c - truth).lpNorm<Eigen::Infinity>() <
        rel_tol * (1.0 + truth.lpNorm<Eigen::Infinity>())) {
      return true;
    }
  }
  return false;
}

struct CaseStats {
  int ok = 0;
  int degenerate = 0;
  int missed = 0;
  int over_cap = 0;
  double total_ms = 0.0;
};

CaseStats run_case_probe(const MinimalCase& mcase, int trials,
                         std::uint64_t seed0, bool planar) {
  CaseStats st;
  for (int t = 0; t < trials; ++t) {
    const auto inst =
        planar ? generate_planar_abstract_instance(mcase.m_req, mcase.n_req,
                                                   10.0, seed0 + t)
               : generate_abstract_instance(mcase.m_req, mcase.n_req, 10.0,
                                            seed0 + t);
    SolveOptions opts;
    opts.seed = seed0 + 7777 + t;
    const auto start = std::chrono::steady_clock::now();
    try {
      const auto roots = solve_minimal(inst.U, mcase, opts);
      st.total_ms += std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
      if (static_cast<int>(roots.size()) > mcase.max_solutions) ++st.over_cap;
      if (contains_truth(roots, inst.offsets)) {
        ++st.ok;
      } else {
        ++st.missed;
        std::printf("  miss t=%d roots=%zu\n", t, roots.size());
      }
    } catch (const Error& e) {
      st.total_ms += std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
      if (e.code() == ErrorCode::DegenerateInstance) {
        ++st.degenerate;
      } else {
        throw;
      }
    }
  }
  return st;
}

}  // namespace

TEST_CASE("solver probe" * doctest::skip(true)) {
  for (const auto& mcase : minimal_cases()) {
    const bool planar = mcase.K == 2;
    const auto st = run_case_probe(mcase, 200, 100000, planar);
    std::printf(
        "case K=%d %dr/%ds: ok=%d missed=%d degen=%d overcap=%d avg=%.2fms\n",
        mcase.K, mcase.m_req, mcase.n_req, st.ok, st.missed, st.degenerate,
        st.over_cap, st.total_ms / 200.0);
  }
  CHECK(true);
}
