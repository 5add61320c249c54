#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace ods {

/// Runs `fn(i)` for i in [0, count) on at most `width` threads. When `keys`
/// is non-empty, tasks sharing a key (e.g. a host name) never run
/// concurrently. Tasks are started in index order as far as the key
/// constraint allows. Exceptions escaping `fn` terminate; callers catch
/// inside the task.
inline void run_bounded(std::size_t count, std::size_t width, const std::function<void(std::size_t)>& fn,
                        const std::vector<std::string>& keys = {}) {
    if (count == 0) return;
    if (width <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::mutex mu;
    std::condition_variable cv;
    std::vector<bool> started(count, false);
    std::multiset<std::string> busy;
    std::size_t remaining = count;

    auto next_task = [&](std::unique_lock<std::mutex>& lk) -> std::size_t {
        for (;;) {
            if (remaining == 0) return count;
            for (std::size_t i = 0; i < count; ++i) {
                if (started[i]) continue;
                if (!keys.empty() && busy.count(keys[i])) continue;
                started[i] = true;
                --remaining;
                if (!keys.empty()) busy.insert(keys[i]);
                return i;
            }
            cv.wait(lk);
        }
    };

    auto worker = [&] {
        for (;;) {
            std::size_t i;
            {
                std::unique_lock lk(mu);
                i = next_task(lk);
            }
            if (i == count) return;
            fn(i);
            if (!keys.empty()) {
                std::lock_guard lk(mu);
                busy.erase(busy.find(keys[i]));
            }
            cv.notify_all();
        }
    };

    std::vector<std::thread> threads;
    auto n = std::min(width, count);
    threads.reserve(n);
    for (std::size_t t = 0; t < n; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
}

}  // namespace ods
