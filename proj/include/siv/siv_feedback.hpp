#pragma once

// Hand-gesture valuing and the explicit push channel.
//
// Gestures arrive as hand-roll samples; the valued hand state is +1 (thumbs up) or
// -1 (thumbs down). Decision ticks are 100 ms apart: tick k observes the latest
// sample with t_ms <= k * 100 (zero-order hold).

#include "siv/errors.hpp"

#include <json.hpp>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace siv
{
    inline constexpr std::int64_t kTickMs = 100;

    constexpr std::int64_t tick_time_ms(std::int64_t tick) noexcept { return tick * kTickMs; }

    struct HandSample
    {
        double roll_deg = 0.0;
        bool present = false;
        std::int64_t t_ms = 0;

        bool operator==(const HandSample &) const = default;
    };

    enum class HandState
    {
        thumbs_up,
        thumbs_down,
    };

    constexpr double value(HandState s) noexcept { return s == HandState::thumbs_up ? 1.0 : -1.0; }

    struct PushEvent
    {
        std::int64_t t_ms = 0;

        bool operator==(const PushEvent &) const = default;
    };

    // Thumbs up iff the hand is present and rolled strictly between -135 and -45 degrees.
    HandState hand_state(const HandSample &sample) noexcept;

    // Roll angles the synthetic user and UI emit for each gesture.
    inline constexpr double kThumbsUpRoll = -90.0;
    inline constexpr double kThumbsDownRoll = 0.0;

    class GestureSource
    {
    public:
        virtual ~GestureSource() = default;
        // Most recent sample at or before the tick. Absent hand when nothing has arrived.
        virtual HandSample latest(std::int64_t tick) = 0;
    };

    HandState sample_at_tick(GestureSource &source, std::int64_t tick);

    // Zero-order hold over an in-memory, time-ordered sample list.
    class RecordedGestureSource final : public GestureSource
    {
    public:
        RecordedGestureSource() = default;
        // Samples must have non-decreasing timestamps. Reading a tick later than
        // `end_ms` raises EndOfStream; nullopt means unbounded.
        explicit RecordedGestureSource(std::vector<HandSample> samples, std::optional<std::int64_t> end_ms = std::nullopt);

        HandSample latest(std::int64_t tick) override;

    private:
        std::vector<HandSample> m_samples;
        std::optional<std::int64_t> m_end_ms;
    };

    // Holds the last sample handed to it; the live tick loop feeds it from the transport channel.
    class HeldGestureSource final : public GestureSource
    {
    public:
        void hold(const HandSample &sample) { m_held = sample; }
        HandSample latest(std::int64_t tick) override;

    private:
        std::optional<HandSample> m_held;
    };

    // Push timestamps waiting for the next decision tick. drain() yields at most one event
    // per tick, collapsing every push that arrived in the window ending at that tick.
    class PushChannel
    {
    public:
        void push(PushEvent event);
        std::optional<PushEvent> drain(std::int64_t tick);
        // Removes every queued push regardless of timestamp.
        std::vector<PushEvent> take_all();
        bool empty() const;

    private:
        mutable std::mutex m_mutex;
        std::deque<PushEvent> m_pending;
    };

    // Bounded single-producer / single-consumer sample queue. When full, the oldest
    // sample is dropped to make room.
    class SampleChannel
    {
    public:
        explicit SampleChannel(std::size_t capacity = 64) : m_capacity(capacity) {}

        void push(HandSample sample);
        std::vector<HandSample> drain();
        std::size_t dropped() const;

    private:
        mutable std::mutex m_mutex;
        std::deque<HandSample> m_samples;
        std::size_t m_capacity;
        std::size_t m_dropped = 0;
    };

    // Newline-delimited replay records:
    //   {"t_ms": ..., "roll_deg": ..., "present": ...}
    //   {"t_ms": ..., "push": true}
    // Other record kinds in the same file are ignored by the gesture reader.
    nlohmann::json to_record(const HandSample &sample);
    nlohmann::json to_record(const PushEvent &push);
    bool is_sample_record(const nlohmann::json &record);
    bool is_push_record(const nlohmann::json &record);
    HandSample sample_from_record(const nlohmann::json &record);
    PushEvent push_from_record(const nlohmann::json &record);

    struct GestureLog
    {
        std::vector<HandSample> samples;
        std::vector<PushEvent> pushes;
        std::optional<std::int64_t> end_ms;
    };

    // Collects gesture and push records from parsed log lines. `end_ms` is the largest
    // timestamp seen unless a later record overrides it.
    GestureLog gesture_log_from_records(const std::vector<nlohmann::json> &records);

    std::vector<nlohmann::json> read_ndjson(const std::filesystem::path &path);

    // Replays recorded pushes through PushChannel semantics, tick by tick.
    class ReplayPushSource
    {
    public:
        ReplayPushSource() = default;
        explicit ReplayPushSource(std::vector<PushEvent> pushes, std::optional<std::int64_t> end_ms = std::nullopt);
        std::optional<PushEvent> drain(std::int64_t tick);

    private:
        std::vector<PushEvent> m_pushes;
        std::size_t m_next = 0;
        std::optional<std::int64_t> m_end_ms;
    };
} // namespace siv
