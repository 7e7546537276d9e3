#include "siv/siv_feedback.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace siv;

TEST(HandState, Examples)
{
    EXPECT_EQ(hand_state(HandSample{-90.0, true, 0}), HandState::thumbs_up);
    EXPECT_EQ(hand_state(HandSample{0.0, true, 0}), HandState::thumbs_down);
    EXPECT_EQ(hand_state(HandSample{-90.0, false, 0}), HandState::thumbs_down);
    EXPECT_EQ(hand_state(HandSample{90.0, true, 0}), HandState::thumbs_down);
    EXPECT_EQ(value(HandState::thumbs_up), 1.0);
    EXPECT_EQ(value(HandState::thumbs_down), -1.0);
}

TEST(HandState, OpenIntervalBoundaries)
{
    EXPECT_EQ(hand_state(HandSample{-45.0, true, 0}), HandState::thumbs_down);
    EXPECT_EQ(hand_state(HandSample{-135.0, true, 0}), HandState::thumbs_down);
    EXPECT_EQ(hand_state(HandSample{-45.001, true, 0}), HandState::thumbs_up);
    EXPECT_EQ(hand_state(HandSample{-134.999, true, 0}), HandState::thumbs_up);
}

TEST(HandState, TotalOverRandomSamples)
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> roll(-180.0, 180.0);
    std::bernoulli_distribution present(0.7);
    for (int i = 0; i < 10000; ++i)
    {
        const HandSample s{roll(rng), present(rng), i};
        const double v = value(hand_state(s));
        ASSERT_TRUE(v == 1.0 || v == -1.0);
        ASSERT_EQ(v == 1.0, s.present && s.roll_deg > -135.0 && s.roll_deg < -45.0);
    }
}

TEST(RecordedGestureSource, AbsentBeforeFirstSample)
{
    RecordedGestureSource source({HandSample{-90.0, true, 250}});
    EXPECT_FALSE(source.latest(0).present);
    EXPECT_EQ(sample_at_tick(source, 2), HandState::thumbs_down);
    EXPECT_EQ(sample_at_tick(source, 3), HandState::thumbs_up);
}

TEST(RecordedGestureSource, ZeroOrderHoldMatchesScan)
{
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<std::int64_t> gap(0, 370);
    std::uniform_real_distribution<double> roll(-180.0, 180.0);
    std::vector<HandSample> samples;
    std::int64_t t = 0;
    for (int i = 0; i < 300; ++i)
    {
        t += gap(rng);
        samples.push_back(HandSample{roll(rng), true, t});
    }
    RecordedGestureSource source(samples);
    for (std::int64_t tick = 0; tick * kTickMs <= t + 500; ++tick)
    {
        // Oracle: linear scan for the last sample at or before the tick time.
        std::optional<HandSample> expected;
        for (const auto &s : samples)
        {
            if (s.t_ms <= tick_time_ms(tick))
            {
                expected = s;
            }
        }
        const HandSample got = source.latest(tick);
        if (expected)
        {
            ASSERT_EQ(got, *expected) << "tick " << tick;
        }
        else
        {
            ASSERT_FALSE(got.present);
        }
    }
}

TEST(RecordedGestureSource, RejectsUnorderedStream)
{
    EXPECT_THROW(RecordedGestureSource({HandSample{0, true, 200}, HandSample{0, true, 100}}), ConfigError);
}

TEST(RecordedGestureSource, ReadingPastEndIsEndOfStream)
{
    RecordedGestureSource source({HandSample{-90.0, true, 100}}, 300);
    EXPECT_NO_THROW(source.latest(3));
    EXPECT_THROW(source.latest(4), EndOfStream);
}

TEST(RecordedGestureSource, ReplayIsDeterministic)
{
    std::vector<HandSample> samples;
    for (int i = 0; i < 100; ++i)
    {
        samples.push_back(HandSample{i % 3 == 0 ? -90.0 : 10.0, i % 7 != 0, i * 37});
    }
    RecordedGestureSource a(samples), b(samples);
    for (std::int64_t tick = 0; tick < 40; ++tick)
    {
        ASSERT_EQ(sample_at_tick(a, tick), sample_at_tick(b, tick));
    }
}

TEST(HeldGestureSource, HoldsLastSampleIndefinitely)
{
    HeldGestureSource held;
    EXPECT_FALSE(held.latest(0).present);
    held.hold(HandSample{-90.0, true, 40});
    for (std::int64_t tick = 1; tick <= 10; ++tick)
    {
        EXPECT_EQ(sample_at_tick(held, tick), HandState::thumbs_up);
    }
}

TEST(PushChannel, CollapsesPushesWithinOneTick)
{
    PushChannel channel;
    channel.push(PushEvent{110});
    channel.push(PushEvent{150});
    channel.push(PushEvent{190});
    channel.push(PushEvent{260});
    EXPECT_FALSE(channel.drain(1).has_value());
    const auto first = channel.drain(2);
    ASSERT_TRUE(first.has_value());
    EXPECT_EQ(first->t_ms, 110);
    EXPECT_EQ(channel.drain(3)->t_ms, 260);
    EXPECT_FALSE(channel.drain(4).has_value());
    EXPECT_TRUE(channel.empty());
}

TEST(PushChannel, TakeAllEmptiesQueue)
{
    PushChannel channel;
    channel.push(PushEvent{5});
    channel.push(PushEvent{900});
    EXPECT_EQ(channel.take_all().size(), 2u);
    EXPECT_TRUE(channel.empty());
}

TEST(SampleChannel, DropsOldestWhenFull)
{
    SampleChannel channel(4);
    for (int i = 0; i < 6; ++i)
    {
        channel.push(HandSample{0.0, true, i});
    }
    EXPECT_EQ(channel.dropped(), 2u);
    const auto drained = channel.drain();
    ASSERT_EQ(drained.size(), 4u);
    EXPECT_EQ(drained.front().t_ms, 2);
    EXPECT_TRUE(channel.drain().empty());
}

TEST(ReplayPushSource, MatchesLiveChannelSemantics)
{
    const std::vector<PushEvent> pushes{{30}, {80}, {450}, {460}, {1000}};
    PushChannel live;
    for (auto p : pushes)
    {
        live.push(p);
    }
    ReplayPushSource replay(pushes);
    for (std::int64_t tick = 0; tick < 12; ++tick)
    {
        ASSERT_EQ(live.drain(tick), replay.drain(tick)) << tick;
    }
}

TEST(ReplayPushSource, ReadingPastEndIsEndOfStream)
{
    ReplayPushSource replay({PushEvent{50}}, 200);
    EXPECT_NO_THROW(replay.drain(2));
    EXPECT_THROW(replay.drain(3), EndOfStream);
}

TEST(Records, RoundTrip)
{
    const HandSample s{-91.5, true, 1234};
    const auto rec = to_record(s);
    EXPECT_TRUE(is_sample_record(rec));
    EXPECT_FALSE(is_push_record(rec));
    EXPECT_EQ(sample_from_record(nlohmann::json::parse(rec.dump())), s);

    const auto push = to_record(PushEvent{777});
    EXPECT_TRUE(is_push_record(push));
    EXPECT_EQ(push_from_record(push).t_ms, 777);

    EXPECT_THROW(sample_from_record(nlohmann::json{{"t_ms", 0}, {"roll_deg", 400.0}}), ConfigError);
}

TEST(Records, GestureLogIgnoresOtherRecords)
{
    const std::vector<nlohmann::json> records{
        nlohmann::json{{"session", {{"id", "x"}}}},
        to_record(HandSample{-90.0, true, 100}),
        to_record(PushEvent{150}),
        nlohmann::json{{"step", 0}, {"action", "forward"}},
        to_record(HandSample{0.0, true, 400}),
    };
    const GestureLog log = gesture_log_from_records(records);
    EXPECT_EQ(log.samples.size(), 2u);
    EXPECT_EQ(log.pushes.size(), 1u);
    EXPECT_EQ(log.end_ms, 400);
}
