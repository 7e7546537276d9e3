#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace siv
{
    // Invalid configuration values. Carries every violation found, not just the first.
    class ConfigError : public std::runtime_error
    {
    public:
        explicit ConfigError(const std::string &what) : std::runtime_error(what), m_violations{what} {}
        explicit ConfigError(std::vector<std::string> violations)
            : std::runtime_error(join(violations)), m_violations(std::move(violations))
        {
        }

        const std::vector<std::string> &violations() const noexcept { return m_violations; }

    private:
        static std::string join(const std::vector<std::string> &items)
        {
            std::string out;
            for (const auto &item : items)
            {
                if (!out.empty())
                {
                    out += "; ";
                }
                out += item;
            }
            return out;
        }

        std::vector<std::string> m_violations;
    };

    // A caller broke an environment or agent contract (unavailable action, empty mask, ...).
    class ContractViolation : public std::logic_error
    {
    public:
        using std::logic_error::logic_error;
    };

    // Non-finite value produced during learning.
    class NumericFault : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };

    // A replayed stream was read past its recorded end.
    class EndOfStream : public std::runtime_error
    {
    public:
        using std::runtime_error::runtime_error;
    };
} // namespace siv
