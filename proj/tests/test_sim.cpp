#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "trajlab/dataset.hpp"
#include "trajlab/rng.hpp"
#include "trajlab/sim.hpp"

using namespace trajlab;

namespace {

sim::SimConfig open_box_config() {
    sim::SimConfig cfg;
    cfg.box_half_width = 500.0;  // walls effectively absent
    return cfg;
}

sim::InteractionGraph empty_graph(int n) {
    sim::InteractionGraph g;
    g.n = n;
    g.springs.assign(static_cast<std::size_t>(n) * n, 0);
    g.charges.assign(n, 0);
    return g;
}

}  // namespace

TEST_CASE("graph sampling: degenerate probabilities") {
    sim::SimConfig cfg;
    auto rng = rng::derive_stream(1, 0);

    cfg.spring_edge_prob = 0.0;
    cfg.charge_prob = 0.0;
    auto g0 = sim::sample_interaction_graph(cfg, rng);
    for (auto s : g0.springs) CHECK(s == 0);
    for (auto c : g0.charges) CHECK(c == 0);

    cfg.spring_edge_prob = 1.0;
    cfg.charge_prob = 1.0;
    auto g1 = sim::sample_interaction_graph(cfg, rng);
    int pairs = 0;
    for (int i = 0; i < 5; ++i)
        for (int j = i + 1; j < 5; ++j) {
            CHECK(g1.spring(i, j));
            ++pairs;
        }
    CHECK(pairs == 10);
    for (int i = 0; i < 5; ++i) CHECK_FALSE(g1.spring(i, i));
}

TEST_CASE("graph sampling: per-edge Monte-Carlo frequency at p=0.5") {
    sim::SimConfig cfg;
    auto rng = rng::derive_stream(2, 0);
    const int n_samples = 10000;
    std::vector<int> edge_count(10, 0);
    std::vector<int> charge_count(5, 0);
    for (int s = 0; s < n_samples; ++s) {
        const auto g = sim::sample_interaction_graph(cfg, rng);
        int e = 0;
        for (int i = 0; i < 5; ++i)
            for (int j = i + 1; j < 5; ++j) edge_count[e++] += g.spring(i, j) ? 1 : 0;
        for (int i = 0; i < 5; ++i) charge_count[i] += g.charges[i];
        // symmetry invariant
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) CHECK(g.spring(i, j) == g.spring(j, i));
    }
    for (int e = 0; e < 10; ++e)
        CHECK(std::abs(edge_count[e] / double(n_samples) - 0.5) < 0.02);
    for (int i = 0; i < 5; ++i)
        CHECK(std::abs(charge_count[i] / double(n_samples) - 0.5) < 0.02);
}

TEST_CASE("initial conditions") {
    sim::SimConfig cfg = open_box_config();
    auto rng = rng::derive_stream(3, 0);

    SUBCASE("speed is exactly init_speed") {
        for (int k = 0; k < 100; ++k) {
            const auto s = sim::sample_initial_conditions(cfg, rng);
            for (int i = 0; i < s.n(); ++i)
                CHECK(std::abs(std::hypot(s.vx[i], s.vy[i]) - 0.5) < 1e-12);
        }
    }
    SUBCASE("zero init_speed gives zero velocities") {
        cfg.init_speed = 0.0;
        const auto s = sim::sample_initial_conditions(cfg, rng);
        for (int i = 0; i < s.n(); ++i) {
            CHECK(s.vx[i] == 0.0);
            CHECK(s.vy[i] == 0.0);
        }
    }
    SUBCASE("position spread matches the sampling sigma") {
        double sum = 0.0, sum2 = 0.0;
        const int n_samples = 20000;  // 5 particles x 2 coords -> 2e5 values
        std::size_t count = 0;
        for (int k = 0; k < n_samples; ++k) {
            const auto s = sim::sample_initial_conditions(cfg, rng);
            for (int i = 0; i < s.n(); ++i) {
                sum += s.x[i] + s.y[i];
                sum2 += s.x[i] * s.x[i] + s.y[i] * s.y[i];
                count += 2;
            }
        }
        const double mean = sum / count;
        const double sd = std::sqrt(sum2 / count - mean * mean);
        CHECK(std::abs(sd - 0.5) < 0.01);
    }
    SUBCASE("resampling keeps initial positions inside a tight box") {
        cfg.box_half_width = 0.3;
        for (int k = 0; k < 200; ++k) {
            const auto s = sim::sample_initial_conditions(cfg, rng);
            for (int i = 0; i < s.n(); ++i) {
                CHECK(std::abs(s.x[i]) <= 0.3);
                CHECK(std::abs(s.y[i]) <= 0.3);
            }
        }
    }
}

TEST_CASE("forces") {
    sim::SimConfig cfg = open_box_config();

    SUBCASE("empty graph gives zero forces") {
        auto s = sim::PhasePoint::zeros(5);
        for (int i = 0; i < 5; ++i) s.x[i] = i;
        const auto f = sim::compute_forces(s, empty_graph(5), cfg);
        for (int i = 0; i < 5; ++i) {
            CHECK(f.fx[i] == 0.0);
            CHECK(f.fy[i] == 0.0);
        }
    }
    SUBCASE("single spring pair follows Hooke's law") {
        auto g = empty_graph(2);
        g.set_spring(0, 1, true);
        auto s = sim::PhasePoint::zeros(2);
        s.x[1] = 0.7;
        const auto f = sim::compute_forces(s, g, cfg);
        CHECK(f.fx[0] == doctest::Approx(cfg.spring_constant * 0.7).epsilon(1e-14));
        CHECK(f.fx[1] == doctest::Approx(-cfg.spring_constant * 0.7).epsilon(1e-14));
        CHECK(f.fy[0] == 0.0);
        CHECK(f.fy[1] == 0.0);
    }
    SUBCASE("charged particles obey Newton's third law in aggregate") {
        auto g = empty_graph(3);
        g.charges = {1, 1, 1};
        sim::PhasePoint s{{0.0, 1.0, 0.3}, {0.0, 0.2, 1.1}, {0, 0, 0}, {0, 0, 0}};
        const auto f = sim::compute_forces(s, g, cfg);
        CHECK(std::abs(f.fx[0] + f.fx[1] + f.fx[2]) < 1e-12);
        CHECK(std::abs(f.fy[0] + f.fy[1] + f.fy[2]) < 1e-12);
    }
    SUBCASE("random mixed graphs keep the force sum at zero") {
        auto rng = rng::derive_stream(4, 0);
        for (int k = 0; k < 50; ++k) {
            const auto g = sim::sample_interaction_graph(cfg, rng);
            const auto s = sim::sample_initial_conditions(cfg, rng);
            const auto f = sim::compute_forces(s, g, cfg);
            double fx = 0.0, fy = 0.0;
            for (int i = 0; i < 5; ++i) {
                fx += f.fx[i];
                fy += f.fy[i];
            }
            CHECK(std::abs(fx) < 1e-12);
            CHECK(std::abs(fy) < 1e-12);
        }
    }
    SUBCASE("non-finite positions are rejected") {
        auto s = sim::PhasePoint::zeros(2);
        s.x[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(sim::compute_forces(s, empty_graph(2), cfg), std::invalid_argument);
    }
}

TEST_CASE("leapfrog step") {
    sim::SimConfig cfg = open_box_config();

    SUBCASE("free drift") {
        auto s = sim::PhasePoint::zeros(2);
        s.vx = {0.3, -0.1};
        s.vy = {0.0, 0.2};
        const auto next = sim::leapfrog_step(s, empty_graph(2), cfg, 0.5);
        CHECK(next.x[0] == doctest::Approx(0.15).epsilon(1e-15));
        CHECK(next.y[1] == doctest::Approx(0.1).epsilon(1e-15));
        CHECK(next.vx[0] == 0.3);
    }
    SUBCASE("harmonic pair matches the closed form at second order") {
        auto g = empty_graph(2);
        g.set_spring(0, 1, true);
        const oracles::SpringPairOracle oracle{cfg.spring_constant, -0.5, 0.5, 0.0, 0.0};
        auto run = [&](double dt, int steps) {
            sim::PhasePoint s{{-0.5, 0.5}, {0, 0}, {0, 0}, {0, 0}};
            for (int k = 0; k < steps; ++k) s = sim::leapfrog_step(s, g, cfg, dt);
            double x1, x2;
            oracle.positions(dt * steps, x1, x2);
            return std::max(std::abs(s.x[0] - x1), std::abs(s.x[1] - x2));
        };
        const double err_dt = run(0.05, 100);
        const double err_half = run(0.025, 200);
        CHECK(err_dt < 1e-3);  // small absolute error over ~0.5 period
        CHECK(err_dt / err_half > 3.0);
        CHECK(err_dt / err_half < 5.0);
    }
    SUBCASE("wall reflection mirrors position and flips the normal velocity") {
        sim::SimConfig box = open_box_config();
        box.box_half_width = 1.0;
        auto s = sim::PhasePoint::zeros(1);
        s.x[0] = 0.95;
        s.vx[0] = 1.0;
        s.vy[0] = 0.5;
        const auto next = sim::leapfrog_step(s, empty_graph(1), box, 0.2);
        CHECK(next.x[0] == doctest::Approx(0.85).epsilon(1e-14));
        CHECK(next.vx[0] == -1.0);
        CHECK(std::hypot(next.vx[0], next.vy[0]) ==
              doctest::Approx(std::hypot(1.0, 0.5)).epsilon(1e-15));
    }
    SUBCASE("fast particles reflect multiple times in one step") {
        sim::SimConfig box = open_box_config();
        box.box_half_width = 1.0;
        auto s = sim::PhasePoint::zeros(1);
        s.x[0] = 0.9;
        s.vx[0] = 25.0;
        const auto next = sim::leapfrog_step(s, empty_graph(1), box, 0.2);
        CHECK(std::abs(next.x[0]) <= 1.0);
        CHECK(std::abs(next.vx[0]) == 25.0);  // speed preserved exactly
    }
}

TEST_CASE("trajectories") {
    sim::SimConfig cfg = open_box_config();
    cfg.n_sampled_steps = 50;

    SUBCASE("no interactions give straight-line sampled states") {
        auto init = sim::PhasePoint::zeros(2);
        init.vx = {0.5, -0.25};
        const auto traj = sim::simulate_trajectory(empty_graph(2), init, cfg);
        REQUIRE(traj.states.size() == 50);
        for (int k = 0; k < 50; ++k)
            CHECK(traj.states[k].x[0] ==
                  doctest::Approx(0.5 * k * cfg.effective_dt()).epsilon(1e-12));
    }
    SUBCASE("deterministic given identical inputs") {
        auto rng1 = rng::derive_stream(5, 0);
        auto rng2 = rng::derive_stream(5, 0);
        const auto g1 = sim::sample_interaction_graph(cfg, rng1);
        const auto i1 = sim::sample_initial_conditions(cfg, rng1);
        const auto g2 = sim::sample_interaction_graph(cfg, rng2);
        const auto i2 = sim::sample_initial_conditions(cfg, rng2);
        const auto t1 = sim::simulate_trajectory(g1, i1, cfg);
        const auto t2 = sim::simulate_trajectory(g2, i2, cfg);
        for (int k = 0; k < 50; ++k)
            for (int i = 0; i < 5; ++i) {
                CHECK(t1.states[k].x[i] == t2.states[k].x[i]);
                CHECK(t1.states[k].vx[i] == t2.states[k].vx[i]);
            }
    }
    SUBCASE("momentum is conserved without wall collisions") {
        auto rng = rng::derive_stream(6, 0);
        const auto g = sim::sample_interaction_graph(cfg, rng);
        const auto init = sim::sample_initial_conditions(cfg, rng);
        const auto traj = sim::simulate_trajectory(g, init, cfg);
        double px0, py0;
        sim::total_momentum(traj.states[0], px0, py0);
        for (const auto& s : traj.states) {
            double px, py;
            sim::total_momentum(s, px, py);
            CHECK(std::abs(px - px0) < 1e-9);
            CHECK(std::abs(py - py0) < 1e-9);
        }
    }
    SUBCASE("leapfrog is time reversible over 100 steps") {
        auto rng = rng::derive_stream(7, 0);
        const auto g = sim::sample_interaction_graph(cfg, rng);
        const auto init = sim::sample_initial_conditions(cfg, rng);
        sim::PhasePoint s = init;
        for (int k = 0; k < 100; ++k) s = sim::leapfrog_step(s, g, cfg, cfg.dt_fine);
        for (int i = 0; i < s.n(); ++i) {
            s.vx[i] = -s.vx[i];
            s.vy[i] = -s.vy[i];
        }
        for (int k = 0; k < 100; ++k) s = sim::leapfrog_step(s, g, cfg, cfg.dt_fine);
        for (int i = 0; i < s.n(); ++i) {
            CHECK(std::abs(s.x[i] - init.x[i]) < 1e-6);
            CHECK(std::abs(s.y[i] - init.y[i]) < 1e-6);
        }
    }
    SUBCASE("energy drift halves quadratically with the time-step") {
        auto g = empty_graph(3);
        g.set_spring(0, 1, true);
        g.set_spring(1, 2, true);
        g.charges = {1, 1, 1};
        sim::PhasePoint init{{-0.6, 0.1, 0.8}, {0.2, -0.5, 0.4}, {0.3, -0.2, 0.1}, {-0.1, 0.25, -0.3}};
        auto drift = [&](double dt) {
            const double e0 = sim::total_energy(init, g, cfg);
            sim::PhasePoint s = init;
            double worst = 0.0;
            const int steps = static_cast<int>(std::lround(5.0 / dt));
            for (int k = 0; k < steps; ++k) {
                s = sim::leapfrog_step(s, g, cfg, dt);
                worst = std::max(worst, std::abs(sim::total_energy(s, g, cfg) - e0));
            }
            return worst;
        };
        const double ratio = drift(0.01) / drift(0.005);
        CHECK(ratio > 3.0);
        CHECK(ratio < 5.0);
    }
    SUBCASE("parallel generation matches the serial reference bitwise") {
        cfg.n_sampled_steps = 20;
        const auto serial = sim::generate_trajectories(cfg, 16, 42, 0, Exec::Serial);
        const auto parallel = sim::generate_trajectories(cfg, 16, 42, 0, Exec::Parallel);
        REQUIRE(serial.size() == parallel.size());
        for (std::size_t t = 0; t < serial.size(); ++t) {
            CHECK(serial[t].graph.springs == parallel[t].graph.springs);
            for (std::size_t k = 0; k < serial[t].states.size(); ++k)
                for (int i = 0; i < 5; ++i)
                    CHECK(serial[t].states[k].x[i] == parallel[t].states[k].x[i]);
        }
    }
}

TEST_CASE("dataset files") {
    sim::SimConfig cfg;  // default box so walls matter, like production data
    cfg.n_sampled_steps = 12;
    const std::string dir = (std::filesystem::temp_directory_path() / "trajlab_ds_test").string();
    std::filesystem::remove_all(dir);
    data::generate_dataset(cfg, {10, 2, 2}, 9, dir, Exec::Parallel);

    const auto train = data::read_dataset(dir + "/train.tuld");
    const auto val = data::read_dataset(dir + "/val.tuld");
    const auto test = data::read_dataset(dir + "/test.tuld");

    SUBCASE("split sizes and consistent headers") {
        CHECK(train.trajectories.size() == 10);
        CHECK(val.trajectories.size() == 2);
        CHECK(test.trajectories.size() == 2);
        CHECK(train.n_particles == 5);
        CHECK(train.n_steps == 12);
        CHECK(train.effective_dt == doctest::Approx(0.1));
        CHECK(val.norm_factors == train.norm_factors);
        CHECK(test.norm_factors == train.norm_factors);
    }
    SUBCASE("train split normalization peaks at exactly 1") {
        float peak[4] = {0, 0, 0, 0};
        for (const auto& tr : train.trajectories)
            for (std::size_t i = 0; i < tr.states.size(); ++i) {
                const int c = static_cast<int>(i % 4);
                peak[c] = std::max(peak[c], std::abs(tr.states[i]));
            }
        for (int c = 0; c < 4; ++c) CHECK(peak[c] == 1.0f);
    }
    SUBCASE("round trip is bitwise identical") {
        data::write_dataset(dir + "/copy.tuld", train);
        const auto copy = data::read_dataset(dir + "/copy.tuld");
        CHECK(copy == train);
    }
    SUBCASE("datasets are reproducible from (cfg, seed)") {
        const std::string dir2 = dir + "_again";
        std::filesystem::remove_all(dir2);
        data::generate_dataset(cfg, {10, 2, 2}, 9, dir2, Exec::Serial);
        const auto again = data::read_dataset(dir2 + "/train.tuld");
        CHECK(again == train);
        std::filesystem::remove_all(dir2);
    }
    SUBCASE("invalid counts are rejected") {
        CHECK_THROWS_AS(data::generate_dataset(cfg, {0, 1, 1}, 1, dir), std::invalid_argument);
    }
    std::filesystem::remove_all(dir);
}
