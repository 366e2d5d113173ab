#ifndef GRPCALC_CORE_HPP
#define GRPCALC_CORE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace grpcalc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ============================================================
// Errors
// ============================================================

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define GRPCALC_ERROR(Name)                                         \
    struct Name : Error {                                           \
        explicit Name(const std::string& msg) : Error(msg) {}       \
    }

GRPCALC_ERROR(NotStrictlyHyperbolic);
GRPCALC_ERROR(NonConvergence);
GRPCALC_ERROR(CurveLeftBox);
GRPCALC_ERROR(NewtonDivergence);
GRPCALC_ERROR(RarefactionRequired);
GRPCALC_ERROR(DegenerateGeometry);
GRPCALC_ERROR(OutOfSector);
GRPCALC_ERROR(DegenerateTime);
GRPCALC_ERROR(BoundViolation);
GRPCALC_ERROR(MinimalAngleViolation);
GRPCALC_ERROR(NoExit);
GRPCALC_ERROR(NoContraction);
GRPCALC_ERROR(OuterDivergence);
GRPCALC_ERROR(DenominatorTooSmall);
GRPCALC_ERROR(OutsidePhysicalDomain);
GRPCALC_ERROR(TooCloseToShock);
GRPCALC_ERROR(ArgumentOutOfDomain);
GRPCALC_ERROR(ShockOnBoundary);
GRPCALC_ERROR(TargetDiscontinuousAtShock);
GRPCALC_ERROR(NonConvergentQuotient);
GRPCALC_ERROR(MissingDerivativeField);
GRPCALC_ERROR(ConfigError);

#undef GRPCALC_ERROR

// ============================================================
// Small utilities
// ============================================================

// 5-node Gauss-Legendre rule on [0, 1].
struct Gauss5 {
    static constexpr int count = 5;
    static const double* nodes() {
        static const double x[5] = {
            0.046910077030668004, 0.230765344947158450, 0.5,
            0.769234655052841550, 0.953089922969331996};
        return x;
    }
    static const double* weights() {
        static const double w[5] = {
            0.118463442528094544, 0.239314335249683234, 0.284444444444444444,
            0.239314335249683234, 0.118463442528094544};
        return w;
    }
};

inline double clamp01(double s) { return s < 0.0 ? 0.0 : (s > 1.0 ? 1.0 : s); }

// Run tasks(0..count-1) on up to `jobs` worker threads.  Results must be
// written into pre-sized slots indexed by task id so that output order is
// independent of scheduling.
inline void parallel_for(int count, int jobs, const std::function<void(int)>& task) {
    if (jobs <= 1 || count <= 1) {
        for (int k = 0; k < count; ++k) task(k);
        return;
    }
    std::atomic<int> next{0};
    int workers = std::min(jobs, count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                int k = next.fetch_add(1);
                if (k >= count) return;
                try {
                    task(k);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline int default_jobs() {
    if (const char* env = std::getenv("GRPCALC_JOBS")) {
        int j = std::atoi(env);
        if (j >= 1) return j;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(hw, 8u));
}

} // namespace grpcalc

#endif // GRPCALC_CORE_HPP
