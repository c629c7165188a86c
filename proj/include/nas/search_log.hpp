#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nas/common.hpp"
#include "nas/space.hpp"

namespace nas::logging {

using nlohmann::json;

// One line of the run log. Every analytics product derives from this stream.
struct Event {
    enum class Kind { meta, submitted, finished, gradient, busy, end };
    Kind kind = Kind::meta;
    double t = 0.0;

    // submitted / finished
    long task_id = -1;
    int agent = -1;
    space::Encoding encoding;
    std::string status;
    double reward = 0.0;
    double duration = 0.0;
    long params = 0;
    bool from_cache = false;

    // gradient
    long version = 0;
    long staleness = 0;

    // busy
    int worker = -1;
    double start = 0.0, end = 0.0;

    // end
    std::string reason;

    // meta
    json meta;

    json to_json() const;
    static Event from_json(const json& j);
};

class SearchLog {
public:
    void append(Event e) { events_.push_back(std::move(e)); }
    const std::vector<Event>& events() const { return events_; }
    std::vector<Event>& events() { return events_; }

    // stable time order; insertion order breaks ties
    void sort_by_time();

    const json* meta() const;

    void write_jsonl(const std::string& path) const;
    // Corrupt lines are skipped and reported via `warnings` as
    // "line N: <error>"; parsing continues.
    static SearchLog read_jsonl(const std::string& path,
                                std::vector<std::string>* warnings = nullptr);

private:
    std::vector<Event> events_;
};

}  // namespace nas::logging
