#include "xbr/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace xbr {

unsigned worker_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("XBAR_THREADS")) {
        try {
            int cap = std::stoi(env);
            if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
        } catch (const std::exception&) {
        }
    }
    return n;
}

std::size_t chunk_count(std::size_t n) {
    if (n == 0) return 0;
    return std::min<std::size_t>(n, worker_count());
}

void parallel_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t chunks = chunk_count(n);
    if (chunks == 0) return;
    auto bounds = [&](std::size_t c) { return n * c / chunks; };
    if (chunks == 1) {
        fn(0, 0, n);
        return;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(chunks);
    threads.reserve(chunks - 1);
    for (std::size_t c = 1; c < chunks; ++c) {
        threads.emplace_back([&, c] {
            try {
                fn(c, bounds(c), bounds(c + 1));
            } catch (...) {
                errors[c] = std::current_exception();
            }
        });
    }
    try {
        fn(0, bounds(0), bounds(1));
    } catch (...) {
        errors[0] = std::current_exception();
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace xbr
