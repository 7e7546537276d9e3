#include "siv/siv_feedback.hpp"

#include <algorithm>
#include <fstream>

namespace siv
{
    HandState hand_state(const HandSample &sample) noexcept
    {
        if (sample.present && sample.roll_deg > -135.0 && sample.roll_deg < -45.0)
        {
            return HandState::thumbs_up;
        }
        return HandState::thumbs_down;
    }

    HandState sample_at_tick(GestureSource &source, std::int64_t tick) { return hand_state(source.latest(tick)); }

    RecordedGestureSource::RecordedGestureSource(std::vector<HandSample> samples, std::optional<std::int64_t> end_ms)
        : m_samples(std::move(samples)), m_end_ms(end_ms)
    {
        const bool ordered = std::is_sorted(m_samples.begin(), m_samples.end(),
                                            [](const HandSample &a, const HandSample &b) { return a.t_ms < b.t_ms; });
        if (!ordered)
        {
            throw ConfigError("gesture stream: timestamps must be non-decreasing");
        }
    }

    HandSample RecordedGestureSource::latest(std::int64_t tick)
    {
        const std::int64_t now = tick_time_ms(tick);
        if (m_end_ms && now > *m_end_ms)
        {
            throw EndOfStream("gesture replay read past end of log at t=" + std::to_string(now) + " ms");
        }
        // Last sample with t_ms <= now; among equal timestamps the later record wins.
        auto it = std::upper_bound(m_samples.begin(), m_samples.end(), now,
                                   [](std::int64_t t, const HandSample &s) { return t < s.t_ms; });
        if (it == m_samples.begin())
        {
            return HandSample{0.0, false, now};
        }
        return *std::prev(it);
    }

    HandSample HeldGestureSource::latest(std::int64_t tick)
    {
        if (!m_held)
        {
            return HandSample{0.0, false, tick_time_ms(tick)};
        }
        return *m_held;
    }

    void PushChannel::push(PushEvent event)
    {
        std::lock_guard lock(m_mutex);
        m_pending.push_back(event);
    }

    std::optional<PushEvent> PushChannel::drain(std::int64_t tick)
    {
        const std::int64_t now = tick_time_ms(tick);
        std::lock_guard lock(m_mutex);
        std::optional<PushEvent> first;
        while (!m_pending.empty() && m_pending.front().t_ms <= now)
        {
            if (!first)
            {
                first = m_pending.front();
            }
            m_pending.pop_front();
        }
        return first;
    }

    std::vector<PushEvent> PushChannel::take_all()
    {
        std::lock_guard lock(m_mutex);
        std::vector<PushEvent> out(m_pending.begin(), m_pending.end());
        m_pending.clear();
        return out;
    }

    bool PushChannel::empty() const
    {
        std::lock_guard lock(m_mutex);
        return m_pending.empty();
    }

    void SampleChannel::push(HandSample sample)
    {
        std::lock_guard lock(m_mutex);
        if (m_samples.size() >= m_capacity)
        {
            m_samples.pop_front();
            ++m_dropped;
        }
        m_samples.push_back(sample);
    }

    std::vector<HandSample> SampleChannel::drain()
    {
        std::lock_guard lock(m_mutex);
        std::vector<HandSample> out(m_samples.begin(), m_samples.end());
        m_samples.clear();
        return out;
    }

    std::size_t SampleChannel::dropped() const
    {
        std::lock_guard lock(m_mutex);
        return m_dropped;
    }

    nlohmann::json to_record(const HandSample &sample)
    {
        return nlohmann::json{{"t_ms", sample.t_ms}, {"roll_deg", sample.roll_deg}, {"present", sample.present}};
    }

    nlohmann::json to_record(const PushEvent &push) { return nlohmann::json{{"t_ms", push.t_ms}, {"push", true}}; }

    bool is_sample_record(const nlohmann::json &record)
    {
        return record.is_object() && record.contains("t_ms") && record.contains("roll_deg");
    }

    bool is_push_record(const nlohmann::json &record)
    {
        return record.is_object() && record.contains("t_ms") && record.contains("push") && record["push"] == true;
    }

    HandSample sample_from_record(const nlohmann::json &record)
    {
        HandSample s;
        s.t_ms = record.at("t_ms").get<std::int64_t>();
        s.roll_deg = record.at("roll_deg").get<double>();
        s.present = record.value("present", true);
        if (!(s.roll_deg >= -180.0 && s.roll_deg <= 180.0))
        {
            throw ConfigError("gesture record: roll_deg outside [-180, 180]");
        }
        return s;
    }

    PushEvent push_from_record(const nlohmann::json &record) { return PushEvent{record.at("t_ms").get<std::int64_t>()}; }

    GestureLog gesture_log_from_records(const std::vector<nlohmann::json> &records)
    {
        GestureLog log;
        for (const auto &record : records)
        {
            if (is_sample_record(record))
            {
                log.samples.push_back(sample_from_record(record));
            }
            else if (is_push_record(record))
            {
                log.pushes.push_back(push_from_record(record));
            }
            else
            {
                continue;
            }
            const auto t = record.at("t_ms").get<std::int64_t>();
            log.end_ms = log.end_ms ? std::max(*log.end_ms, t) : t;
        }
        return log;
    }

    std::vector<nlohmann::json> read_ndjson(const std::filesystem::path &path)
    {
        std::ifstream in(path);
        if (!in)
        {
            throw std::runtime_error("cannot open " + path.string());
        }
        std::vector<nlohmann::json> out;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line))
        {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos)
            {
                continue;
            }
            try
            {
                out.push_back(nlohmann::json::parse(line));
            }
            catch (const nlohmann::json::parse_error &e)
            {
                throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        return out;
    }

    ReplayPushSource::ReplayPushSource(std::vector<PushEvent> pushes, std::optional<std::int64_t> end_ms)
        : m_pushes(std::move(pushes)), m_end_ms(end_ms)
    {
        std::stable_sort(m_pushes.begin(), m_pushes.end(),
                         [](const PushEvent &a, const PushEvent &b) { return a.t_ms < b.t_ms; });
    }

    std::optional<PushEvent> ReplayPushSource::drain(std::int64_t tick)
    {
        const std::int64_t now = tick_time_ms(tick);
        if (m_end_ms && now > *m_end_ms)
        {
            throw EndOfStream("push replay read past end of log at t=" + std::to_string(now) + " ms");
        }
        std::optional<PushEvent> first;
        while (m_next < m_pushes.size() && m_pushes[m_next].t_ms <= now)
        {
            if (!first)
            {
                first = m_pushes[m_next];
            }
            ++m_next;
        }
        return first;
    }
} // namespace siv
