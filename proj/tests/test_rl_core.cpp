#include "siv/rl_core.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <limits>
#include <set>

using namespace siv;

namespace
{
    // Reference tiler: walks cell boundaries explicitly instead of dividing.
    std::size_t reference_cell(double x, double lower, double upper, int tiles, double offset)
    {
        x = std::clamp(x, lower, upper);
        const double width = (upper - lower) / tiles;
        std::size_t cell = 0;
        for (int c = 1; c <= tiles; ++c)
        {
            if (x >= lower + (c - offset) * width)
            {
                cell = static_cast<std::size_t>(c);
            }
        }
        return cell;
    }

    std::vector<std::size_t> reference_tiles(double x, double y, int tiles, int tilings)
    {
        const std::size_t side = static_cast<std::size_t>(tiles) + 1;
        const std::size_t per_tiling = side * side;
        std::vector<std::size_t> out;
        for (int t = 0; t < tilings; ++t)
        {
            const double off = static_cast<double>(t) / tilings;
            const std::size_t cx = reference_cell(x, 0.0, 1.0, tiles, off);
            const std::size_t cy = reference_cell(y, 0.0, 1.0, tiles, off);
            out.push_back(static_cast<std::size_t>(t) * per_tiling + cx * side + cy);
        }
        return out;
    }

    TilingConfig plane_tiling(int tilings, int tiles = 8)
    {
        return make_tiling(FeatureBounds{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}}, {tiles, tiles, 1}, tilings,
                           {{}, {}, {1.0}});
    }

    // One tiling, one discrete cell per chain state.
    TilingConfig chain_tiling(int states)
    {
        std::vector<double> levels;
        for (int s = 0; s < states; ++s)
        {
            levels.push_back(s);
        }
        return make_tiling(FeatureBounds{{0.0, 0.0}, {double(states - 1), 1.0}}, {states, 1}, 1, {levels, {1.0}});
    }

    FeatureVector chain(int s) { return FeatureVector{{double(s), 1.0}}; }

    std::vector<double> frequencies(const std::vector<double> &q, const ActionMask &mask, const AgentConfig &cfg,
                                    int draws, std::uint64_t seed = 1)
    {
        Rng rng(seed);
        std::vector<double> counts(q.size(), 0.0);
        for (int i = 0; i < draws; ++i)
        {
            counts[select_action(q, mask, cfg, rng)] += 1.0;
        }
        for (auto &c : counts)
        {
            c /= draws;
        }
        return counts;
    }
} // namespace

TEST(TileCode, LowerCornerIsIndexZeroWithOneTiling)
{
    const auto cfg = plane_tiling(1);
    EXPECT_EQ(tile_code(FeatureVector{{0.0, 0.0, 1.0}}, cfg).indices, std::vector<std::size_t>{0});
}

TEST(TileCode, SameCellSameTiles)
{
    const auto cfg = plane_tiling(1);
    EXPECT_EQ(tile_code(FeatureVector{{0.26, 0.51, 1.0}}, cfg), tile_code(FeatureVector{{0.30, 0.60, 1.0}}, cfg));
}

TEST(TileCode, MatchesReferenceTilerOnGrid)
{
    const auto cfg = plane_tiling(8);
    for (int i = 0; i < 50; ++i)
    {
        for (int j = 0; j < 50; ++j)
        {
            const double x = i / 49.0;
            const double y = j / 49.0;
            const auto active = tile_code(FeatureVector{{x, y, 1.0}}, cfg);
            ASSERT_EQ(active.indices, reference_tiles(x, y, 8, 8)) << "x=" << x << " y=" << y;
            std::set<std::size_t> distinct(active.indices.begin(), active.indices.end());
            ASSERT_EQ(distinct.size(), 8u);
            for (std::size_t idx : active.indices)
            {
                ASSERT_LT(idx, cfg.table_size);
            }
        }
    }
}

TEST(TileCode, ClampsOutOfBounds)
{
    const auto cfg = plane_tiling(8);
    EXPECT_EQ(tile_code(FeatureVector{{-3.0, 7.0, 1.0}}, cfg), tile_code(FeatureVector{{0.0, 1.0, 1.0}}, cfg));
}

TEST(TileCode, DimensionMismatchIsConfigError)
{
    const auto cfg = plane_tiling(8);
    EXPECT_THROW(tile_code(FeatureVector{{0.5, 1.0}}, cfg), ConfigError);
}

TEST(TileCode, DiscreteDimensionsAreNotOffset)
{
    const auto cfg = make_tiling(FeatureBounds{{0.0, -1.0, 0.0}, {1.0, 1.0, 1.0}}, {8, 2, 1}, 8,
                                 {{0.25, 0.5, 0.75, 1.0}, {-1.0, 1.0}, {1.0}});
    // Each tiling holds one cell per (grip, hand) pair, so distinct discrete values never share a tile.
    std::set<std::size_t> seen;
    for (double g : {0.25, 0.5, 0.75, 1.0})
    {
        for (double h : {-1.0, 1.0})
        {
            for (std::size_t idx : tile_code(FeatureVector{{g, h, 1.0}}, cfg).indices)
            {
                EXPECT_TRUE(seen.insert(idx).second);
            }
        }
    }
    EXPECT_EQ(seen.size(), 4u * 2u * 8u);
}

TEST(QValue, ZeroWeightsGiveZero)
{
    const auto cfg = plane_tiling(8);
    WeightVector w(cfg.table_size, 3);
    EXPECT_EQ(q_value(w, tile_code(FeatureVector{{0.3, 0.7, 1.0}}, cfg), 2), 0.0);
}

TEST(QValue, ConstantWeightsScaleWithTilings)
{
    const auto cfg = plane_tiling(8);
    WeightVector w(cfg.table_size, 2, 0.25);
    EXPECT_DOUBLE_EQ(q_value(w, tile_code(FeatureVector{{0.3, 0.7, 1.0}}, cfg), 1), 0.25 * 8);
}

TEST(QValue, MatchesDirectSummation)
{
    const auto cfg = plane_tiling(8);
    WeightVector w(cfg.table_size, 4);
    Rng rng(5);
    std::normal_distribution<double> normal;
    for (auto &x : w.data())
    {
        x = normal(rng);
    }
    const auto active = tile_code(FeatureVector{{0.42, 0.13, 1.0}}, cfg);
    for (std::size_t a = 0; a < 4; ++a)
    {
        double sum = 0.0;
        for (std::size_t i : active.indices)
        {
            sum += w.data()[i * 4 + a];
        }
        EXPECT_EQ(q_value(w, active, a), sum);
    }
}

TEST(SelectAction, GreedyWhenEpsilonZero)
{
    AgentConfig cfg;
    cfg.epsilon = 0.0;
    Rng rng(1);
    for (int i = 0; i < 100; ++i)
    {
        EXPECT_EQ(select_action(std::vector<double>{1.0, 0.0}, ActionMask(2, true), cfg, rng), 0u);
    }
}

TEST(SelectAction, UniformWhenEpsilonOne)
{
    AgentConfig cfg;
    cfg.epsilon = 1.0;
    const auto f = frequencies({1.0, 0.0}, ActionMask(2, true), cfg, 10000);
    EXPECT_NEAR(f[0], 0.5, 0.02);
    EXPECT_NEAR(f[1], 0.5, 0.02);
}

TEST(SelectAction, EpsilonGreedyClosedForm)
{
    AgentConfig cfg;
    cfg.epsilon = 0.1;
    const auto f = frequencies({1.0, 0.0, 0.0}, ActionMask(3, true), cfg, 100000);
    EXPECT_NEAR(f[0], 0.9 + 0.1 / 3, 0.01);
    EXPECT_NEAR(f[1], 0.1 / 3, 0.01);
    EXPECT_NEAR(f[2], 0.1 / 3, 0.01);
}

TEST(SelectAction, EpsilonSoftClosedForm)
{
    AgentConfig cfg;
    cfg.epsilon = 0.2;
    cfg.strategy = SelectionStrategy::epsilon_soft;
    const auto f = frequencies({0.0, 2.0, 1.0, -1.0}, ActionMask(4, true), cfg, 100000);
    EXPECT_NEAR(f[1], 0.8, 0.01);
    for (std::size_t a : {0u, 2u, 3u})
    {
        EXPECT_NEAR(f[a], 0.2 / 3, 0.01);
    }
}

TEST(SelectAction, SoftmaxClosedForm)
{
    AgentConfig cfg;
    cfg.strategy = SelectionStrategy::softmax;
    cfg.temperature = 0.5;
    const std::vector<double> q{1.0, 0.5, -1.0};
    double z = 0.0;
    for (double v : q)
    {
        z += std::exp(v / 0.5);
    }
    const auto f = frequencies(q, ActionMask(3, true), cfg, 100000);
    for (std::size_t a = 0; a < 3; ++a)
    {
        EXPECT_NEAR(f[a], std::exp(q[a] / 0.5) / z, 0.01);
    }
}

TEST(SelectAction, TiesBrokenUniformly)
{
    AgentConfig cfg;
    cfg.epsilon = 0.0;
    const auto f = frequencies({1.0, 0.0, 1.0}, ActionMask(3, true), cfg, 20000);
    EXPECT_NEAR(f[0], 0.5, 0.02);
    EXPECT_EQ(f[1], 0.0);
    EXPECT_NEAR(f[2], 0.5, 0.02);
}

TEST(SelectAction, MaskedMaximumIsNeverChosen)
{
    AgentConfig cfg;
    cfg.epsilon = 0.0;
    ActionMask mask(3, true);
    mask.set(0, false);
    const auto f = frequencies({5.0, 1.0, 0.0}, mask, cfg, 1000);
    EXPECT_EQ(f[0], 0.0);
    EXPECT_EQ(f[1], 1.0);
}

TEST(SelectAction, NeverReturnsUnavailableAction)
{
    Rng rng(77);
    std::uniform_int_distribution<int> strategy(0, 2);
    std::uniform_int_distribution<std::size_t> width(1, 8);
    std::uniform_real_distribution<double> value(-5.0, 5.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::bernoulli_distribution bit(0.5);
    for (int i = 0; i < 10000; ++i)
    {
        const std::size_t n = width(rng);
        std::vector<double> q(n);
        ActionMask mask(n);
        for (std::size_t a = 0; a < n; ++a)
        {
            q[a] = value(rng);
            mask.set(a, bit(rng));
        }
        if (!mask.any())
        {
            mask.set(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
        }
        AgentConfig cfg;
        cfg.strategy = static_cast<SelectionStrategy>(strategy(rng));
        cfg.epsilon = unit(rng);
        cfg.temperature = 0.05 + unit(rng);
        const std::size_t chosen = select_action(q, mask, cfg, rng);
        ASSERT_TRUE(mask.test(chosen));
    }
}

TEST(SelectAction, EmptyMaskIsContractViolation)
{
    AgentConfig cfg;
    Rng rng(1);
    EXPECT_THROW(select_action(std::vector<double>{0.0, 0.0}, ActionMask(2, false), cfg, rng), ContractViolation);
}

TEST(TdError, ZeroWeightsZeroReward)
{
    const auto coder = chain_tiling(3);
    WeightVector w(coder.table_size, 2);
    EXPECT_EQ(td_error(Transition{chain(0), 0, 0.0, chain(1), 1, false}, w, AgentConfig{}, coder), 0.0);
}

TEST(TdError, TerminalTargetIsReward)
{
    const auto coder = chain_tiling(3);
    WeightVector w(coder.table_size, 2);
    EXPECT_EQ(td_error(Transition{chain(0), 0, -1.0, chain(1), 1, true}, w, AgentConfig{}, coder), -1.0);
}

TEST(TdError, HandComputedTwoStateChain)
{
    const auto coder = chain_tiling(2);
    WeightVector w(coder.table_size, 2);
    w.at(tile_code(chain(0), coder).indices[0], 0) = 0.5;
    w.at(tile_code(chain(1), coder).indices[0], 1) = 2.0;
    AgentConfig cfg;
    cfg.discount = 0.9;
    // -1 + 0.9 * 2.0 - 0.5
    EXPECT_NEAR(td_error(Transition{chain(0), 0, -1.0, chain(1), 1, false}, w, cfg, coder), 0.3, 1e-15);
    // Terminal ignores the successor value: -1 - 0.5
    EXPECT_EQ(td_error(Transition{chain(0), 0, -1.0, chain(1), 1, true}, w, cfg, coder), -1.5);
}

TEST(SarsaUpdate, ZeroErrorLeavesWeights)
{
    const auto coder = chain_tiling(3);
    WeightVector w(coder.table_size, 2);
    EligibilityTraces e(coder.table_size, 2);
    EXPECT_EQ(sarsa_update(w, e, Transition{chain(0), 0, 0.0, chain(1), 1, false}, AgentConfig{}, coder), 0.0);
    EXPECT_EQ(w, WeightVector(coder.table_size, 2));
}

TEST(SarsaUpdate, OneStepTerminalHalvesReward)
{
    const auto coder = chain_tiling(3);
    WeightVector w(coder.table_size, 2);
    EligibilityTraces e(coder.table_size, 2);
    AgentConfig cfg;
    cfg.step_size = 0.5;
    sarsa_update(w, e, Transition{chain(0), 1, -1.0, chain(1), 0, true}, cfg, coder);
    EXPECT_EQ(w.at(tile_code(chain(0), coder).indices[0], 1), -0.5);
}

TEST(SarsaUpdate, StepSizeIsDividedByTilings)
{
    const auto coder = plane_tiling(8);
    WeightVector w(coder.table_size, 2);
    EligibilityTraces e(coder.table_size, 2);
    const FeatureVector phi{{0.3, 0.3, 1.0}};
    sarsa_update(w, e, Transition{phi, 0, -1.0, phi, 0, true}, AgentConfig{}, coder);
    for (std::size_t idx : tile_code(phi, coder).indices)
    {
        EXPECT_EQ(w.at(idx, 0), -0.5 / 8);
    }
    EXPECT_DOUBLE_EQ(q_value(w, tile_code(phi, coder), 0), -0.5);
}

TEST(SarsaUpdate, LambdaMatchesTabularOracleOnThreeStepEpisode)
{
    for (TraceMode mode : {TraceMode::replacing, TraceMode::accumulating})
    {
        const auto coder = chain_tiling(4);
        AgentConfig cfg;
        cfg.step_size = 0.5;
        cfg.discount = 1.0;
        cfg.trace_decay = 0.9;
        cfg.trace_mode = mode;
        WeightVector w(coder.table_size, 2);
        EligibilityTraces e(coder.table_size, 2, mode);

        // Tabular oracle: update weights, then decay traces.
        std::array<std::array<double, 2>, 4> q{}, z{};
        struct Step
        {
            int s, a;
            double r;
            int s2, a2;
            bool terminal;
        };
        // 0 -right-> 1 -left-> 0 -right-> 1 -right-> 2 -right-> 3 (terminal), run twice.
        const std::vector<Step> episode{{0, 1, 0.0, 1, 0, false}, {1, 0, -1.0, 0, 1, false},
                                        {0, 1, 0.0, 1, 1, false}, {1, 1, 0.0, 2, 1, false},
                                        {2, 1, 1.0, 3, 0, true}};
        for (int rep = 0; rep < 2; ++rep)
        {
            reset_traces(e);
            z = {};
            for (const Step &t : episode)
            {
                sarsa_update(w, e, Transition{chain(t.s), std::size_t(t.a), t.r, chain(t.s2), std::size_t(t.a2), t.terminal},
                             cfg, coder);
                const double delta = (t.terminal ? t.r : t.r + q[t.s2][t.a2]) - q[t.s][t.a];
                z[t.s][t.a] = mode == TraceMode::accumulating ? z[t.s][t.a] + 1.0 : 1.0;
                for (int s = 0; s < 4; ++s)
                {
                    for (int a = 0; a < 2; ++a)
                    {
                        q[s][a] += 0.5 * delta * z[s][a];
                        z[s][a] *= 0.9;
                    }
                }
            }
        }
        for (int s = 0; s < 3; ++s)
        {
            for (int a = 0; a < 2; ++a)
            {
                EXPECT_NEAR(w.at(tile_code(chain(s), coder).indices[0], std::size_t(a)), q[s][a], 1e-12)
                    << "s=" << s << " a=" << a;
            }
        }
    }
}

TEST(SarsaUpdate, NonFiniteErrorIsNumericFault)
{
    const auto coder = chain_tiling(3);
    WeightVector w(coder.table_size, 2);
    EligibilityTraces e(coder.table_size, 2);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(sarsa_update(w, e, Transition{chain(0), 0, nan, chain(1), 0, false}, AgentConfig{}, coder),
                 NumericFault);
}

TEST(Traces, AccumulatingDecayIsExactPower)
{
    const auto coder = chain_tiling(4);
    AgentConfig cfg;
    cfg.discount = 0.9;
    cfg.trace_decay = 0.8;
    cfg.trace_mode = TraceMode::accumulating;
    WeightVector w(coder.table_size, 2);
    EligibilityTraces e(coder.table_size, 2, TraceMode::accumulating);
    sarsa_update(w, e, Transition{chain(0), 0, 0.0, chain(1), 0, false}, cfg, coder);
    const std::size_t tile = tile_code(chain(0), coder).indices[0];
    const double prior = e.at(tile, 0);
    ASSERT_EQ(prior, 1.0);
    const double d = cfg.discount * cfg.trace_decay;
    double expected = prior;
    for (int k = 1; k <= 20; ++k)
    {
        sarsa_update(w, e, Transition{chain(2), 1, 0.0, chain(3), 1, false}, cfg, coder);
        expected *= d;
        ASSERT_EQ(e.at(tile, 0), expected) << "k=" << k;
    }
}

TEST(Traces, ResetClearsAndIsIdempotent)
{
    const auto coder = chain_tiling(4);
    AgentConfig cfg;
    cfg.trace_decay = 0.9;
    WeightVector w(coder.table_size, 2);
    EligibilityTraces e(coder.table_size, 2);
    sarsa_update(w, e, Transition{chain(0), 0, 1.0, chain(1), 0, false}, cfg, coder);
    sarsa_update(w, e, Transition{chain(1), 1, 1.0, chain(2), 0, false}, cfg, coder);
    reset_traces(e);
    for (double v : e.data())
    {
        EXPECT_EQ(v, 0.0);
    }
    EXPECT_TRUE(e.support().empty());
    reset_traces(e);
    for (double v : e.data())
    {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Traces, FirstUpdateAfterResetTouchesOnlyActiveTiles)
{
    const auto coder = plane_tiling(8);
    AgentConfig cfg;
    cfg.trace_decay = 0.9;
    WeightVector w(coder.table_size, 3);
    EligibilityTraces e(coder.table_size, 3);
    sarsa_update(w, e, Transition{FeatureVector{{0.1, 0.1, 1.0}}, 0, 1.0, FeatureVector{{0.9, 0.9, 1.0}}, 1, false},
                 cfg, coder);
    reset_traces(e);
    const WeightVector before = w;
    const FeatureVector phi{{0.5, 0.2, 1.0}};
    sarsa_update(w, e, Transition{phi, 2, -1.0, phi, 2, true}, cfg, coder);

    std::set<std::size_t> expected;
    for (std::size_t idx : tile_code(phi, coder).indices)
    {
        expected.insert(idx * 3 + 2);
    }
    std::set<std::size_t> support(e.support().begin(), e.support().end());
    EXPECT_EQ(support, expected);
    for (std::size_t i = 0; i < w.data().size(); ++i)
    {
        if (!expected.count(i))
        {
            EXPECT_EQ(w.data()[i], before.data()[i]) << i;
        }
    }
}

TEST(SarsaLearner, IdenticalSeedsGiveIdenticalWeights)
{
    auto run = [] {
        AgentConfig cfg;
        cfg.seed = 42;
        cfg.trace_decay = 0.5;
        SarsaLearner learner(plane_tiling(8), cfg, 3);
        Rng env(9);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        FeatureVector phi{{u(env), u(env), 1.0}};
        std::size_t a = learner.select(phi, ActionMask(3, true));
        std::vector<std::size_t> actions;
        for (int i = 0; i < 2000; ++i)
        {
            FeatureVector next{{u(env), u(env), 1.0}};
            const std::size_t a2 = learner.select(next, ActionMask(3, true));
            learner.update(Transition{phi, a, u(env) < 0.1 ? -1.0 : 0.0, next, a2, i % 50 == 49});
            if (i % 50 == 49)
            {
                learner.begin_episode();
            }
            actions.push_back(a2);
            phi = next;
            a = a2;
        }
        return std::make_pair(weights_digest(learner.weights()), actions);
    };
    EXPECT_EQ(run(), run());
}

TEST(SarsaLearner, SnapshotRoundTrip)
{
    AgentConfig cfg;
    cfg.seed = 3;
    cfg.epsilon = 0.25;
    cfg.strategy = SelectionStrategy::softmax;
    SarsaLearner learner(plane_tiling(4), cfg, 2);
    const FeatureVector phi{{0.2, 0.8, 1.0}};
    learner.update(Transition{phi, 1, -0.3, phi, 0, true});

    const nlohmann::json j = snapshot(learner);
    EXPECT_EQ(j.at("format_version"), kSnapshotFormatVersion);
    const auto back = nlohmann::json::parse(j.dump()).get<WeightSnapshot>();
    EXPECT_EQ(back.weights, learner.weights());
    EXPECT_EQ(back.steps, learner.steps());
    EXPECT_EQ(back.coder.table_size, learner.coder().table_size);
    EXPECT_EQ(back.config.strategy, SelectionStrategy::softmax);
    EXPECT_EQ(back.config.epsilon, 0.25);

    nlohmann::json wrong = j;
    wrong["format_version"] = 99;
    EXPECT_THROW(wrong.get<WeightSnapshot>(), ConfigError);
}

TEST(AgentConfig, ListsEveryViolation)
{
    AgentConfig cfg;
    cfg.step_size = 0.0;
    cfg.discount = 1.5;
    cfg.epsilon = -0.1;
    cfg.temperature = 0.0;
    cfg.strategy = SelectionStrategy::softmax;
    EXPECT_EQ(cfg.violations().size(), 4u);
    try
    {
        cfg.validate();
        FAIL();
    }
    catch (const ConfigError &e)
    {
        EXPECT_EQ(e.violations().size(), 4u);
    }
}

TEST(SarsaLearner, GreedyChainMatchesValueIteration)
{
    // States 0, 1 and a terminal at 2; action 0 moves left (clamped), action 1 moves right; -1 per step.
    constexpr int kTerminal = 2;
    auto next = [](int s, std::size_t a) { return a == 1 ? s + 1 : std::max(s - 1, 0); };

    std::array<double, kTerminal + 1> v{};
    for (int sweep = 0; sweep < 100; ++sweep)
    {
        for (int s = 0; s < kTerminal; ++s)
        {
            v[s] = std::max(-1.0 + v[next(s, 0)], -1.0 + v[next(s, 1)]);
        }
    }

    const auto coder = chain_tiling(kTerminal + 1);
    AgentConfig cfg;
    cfg.step_size = 0.5;
    cfg.discount = 1.0;
    cfg.trace_decay = 0.5;
    cfg.epsilon = 0.0;
    cfg.seed = 12;
    SarsaLearner learner(coder, cfg, 2);
    const ActionMask all(2, true);
    for (int episode = 0; episode < 200; ++episode)
    {
        learner.begin_episode();
        int s = 0;
        std::size_t a = learner.select(chain(s), all);
        for (int t = 0; t < 100; ++t)
        {
            const int s2 = next(s, a);
            const bool terminal = s2 == kTerminal;
            const std::size_t a2 = terminal ? 0 : learner.select(chain(s2), all);
            learner.update(Transition{chain(s), a, -1.0, chain(s2), a2, terminal});
            if (terminal)
            {
                break;
            }
            s = s2;
            a = a2;
        }
    }

    for (int s = 0; s < kTerminal; ++s)
    {
        const auto q = learner.action_values(chain(s));
        EXPECT_NEAR(std::max(q[0], q[1]), v[s], 1e-6) << "s=" << s;
        EXPECT_GT(q[1], q[0]) << "s=" << s;
    }
}
