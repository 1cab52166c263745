#include "matchnet/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace matchnet {

namespace {
std::mutex g_sink_mutex;
WarningSink g_sink;
} // namespace

WarningSink set_warning_sink(WarningSink sink) {
    std::lock_guard lock(g_sink_mutex);
    return std::exchange(g_sink, std::move(sink));
}

void warn(std::string_view message) {
    std::lock_guard lock(g_sink_mutex);
    if (g_sink) {
        g_sink(message);
        return;
    }
    std::cerr << "warning: " << message << '\n';
}

} // namespace matchnet
