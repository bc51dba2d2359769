#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <string>

#include <varident/verify.hpp>

using namespace varident;

namespace {

// reduced sample counts keep the unit suite quick; the acceptance suite runs
// the full-size configuration
VerifyOptions quick() {
    VerifyOptions opt;
    opt.kl_gaussians = 6;
    opt.kl_samples = 120000;
    opt.decomp_instances = 4;
    opt.decomp_samples = 150000;
    opt.grad_coords_per_param = 4;
    opt.metric_instances = 40;
    return opt;
}

} // namespace

TEST_CASE("self-check suite passes at the default seed") {
    const VerifyReport rep = run_verify(quick());
    REQUIRE(rep.checks.size() == 4);
    REQUIRE(rep.all_pass());

    std::set<std::string> names;
    for (const CheckResult& c : rep.checks) {
        names.insert(c.name);
        INFO(c.name << ": residual " << c.residual << " bound " << c.bound);
        REQUIRE(c.pass);
        REQUIRE(c.residual <= c.bound);
        REQUIRE_FALSE(c.detail.empty());
    }
    REQUIRE(names.size() == 4); // four distinct checks
}

TEST_CASE("self-check results are deterministic and thread-count independent") {
    VerifyOptions opt = quick();
    opt.kl_gaussians = 4;
    opt.decomp_instances = 2;
    opt.metric_instances = 10;

    const VerifyReport a = run_verify(opt);
    VerifyOptions two = opt;
    two.threads = 2;
    const VerifyReport b = run_verify(two);

    REQUIRE(a.checks.size() == b.checks.size());
    for (std::size_t i = 0; i < a.checks.size(); ++i) {
        REQUIRE(a.checks[i].name == b.checks[i].name);
        REQUIRE(a.checks[i].residual == b.checks[i].residual);
        REQUIRE(a.checks[i].pass == b.checks[i].pass);
    }
}

TEST_CASE("a tampered closed form is caught by the divergence check") {
    VerifyOptions opt = quick();
    opt.closed_form_scale = 1.05; // 5 percent bias must blow past 3 standard errors
    const VerifyReport rep = run_verify(opt);
    REQUIRE_FALSE(rep.all_pass());

    int failed = 0;
    for (const CheckResult& c : rep.checks) {
        if (!c.pass) {
            ++failed;
            REQUIRE(c.name == "kl_closed_vs_mc");
        }
    }
    REQUIRE(failed == 1); // the other three checks are untouched
}
