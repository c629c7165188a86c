#include <algorithm>
#include <fstream>

#include "nas/search_log.hpp"

namespace nas::logging {

namespace {

const char* kind_name(Event::Kind k) {
    switch (k) {
        case Event::Kind::meta: return "meta";
        case Event::Kind::submitted: return "submitted";
        case Event::Kind::finished: return "finished";
        case Event::Kind::gradient: return "gradient";
        case Event::Kind::busy: return "busy";
        case Event::Kind::end: return "end";
    }
    return "?";
}

Event::Kind kind_from(const std::string& s) {
    if (s == "meta") return Event::Kind::meta;
    if (s == "submitted") return Event::Kind::submitted;
    if (s == "finished") return Event::Kind::finished;
    if (s == "gradient") return Event::Kind::gradient;
    if (s == "busy") return Event::Kind::busy;
    if (s == "end") return Event::Kind::end;
    throw Error("unknown event kind: " + s);
}

}  // namespace

json Event::to_json() const {
    json j;
    j["event"] = kind_name(kind);
    j["t"] = t;
    switch (kind) {
        case Kind::meta:
            j["meta"] = meta;
            break;
        case Kind::submitted:
            j["task"] = task_id;
            j["agent"] = agent;
            j["encoding"] = encoding;
            break;
        case Kind::finished:
            j["task"] = task_id;
            j["agent"] = agent;
            j["encoding"] = encoding;
            j["status"] = status;
            j["reward"] = reward;
            j["duration"] = duration;
            j["params"] = params;
            j["from_cache"] = from_cache;
            break;
        case Kind::gradient:
            j["agent"] = agent;
            j["version"] = version;
            j["staleness"] = staleness;
            break;
        case Kind::busy:
            j["worker"] = worker;
            j["start"] = start;
            j["end"] = end;
            j["task"] = task_id;
            break;
        case Kind::end:
            j["reason"] = reason;
            break;
    }
    return j;
}

Event Event::from_json(const json& j) {
    Event e;
    e.kind = kind_from(j.at("event").get<std::string>());
    e.t = j.value("t", 0.0);
    switch (e.kind) {
        case Kind::meta:
            e.meta = j.value("meta", json::object());
            break;
        case Kind::submitted:
            e.task_id = j.value("task", -1L);
            e.agent = j.value("agent", -1);
            e.encoding = j.value("encoding", space::Encoding{});
            break;
        case Kind::finished:
            e.task_id = j.value("task", -1L);
            e.agent = j.value("agent", -1);
            e.encoding = j.value("encoding", space::Encoding{});
            e.status = j.value("status", "ok");
            e.reward = j.at("reward").get<double>();
            e.duration = j.value("duration", 0.0);
            e.params = j.value("params", 0L);
            e.from_cache = j.value("from_cache", false);
            break;
        case Kind::gradient:
            e.agent = j.value("agent", -1);
            e.version = j.value("version", 0L);
            e.staleness = j.value("staleness", 0L);
            break;
        case Kind::busy:
            e.worker = j.value("worker", -1);
            e.start = j.at("start").get<double>();
            e.end = j.at("end").get<double>();
            e.task_id = j.value("task", -1L);
            break;
        case Kind::end:
            e.reason = j.value("reason", "");
            break;
    }
    return e;
}

void SearchLog::sort_by_time() {
    std::stable_sort(events_.begin(), events_.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
}

const json* SearchLog::meta() const {
    for (const auto& e : events_)
        if (e.kind == Event::Kind::meta) return &e.meta;
    return nullptr;
}

void SearchLog::write_jsonl(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error("cannot write log: " + path);
    for (const auto& e : events_) f << e.to_json().dump() << "\n";
}

SearchLog SearchLog::read_jsonl(const std::string& path, std::vector<std::string>* warnings) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read log: " + path);
    SearchLog log;
    std::string line;
    long line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            log.append(Event::from_json(json::parse(line)));
        } catch (const std::exception& e) {
            if (warnings)
                warnings->push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return log;
}

}  // namespace nas::logging
