#include "vsa/common.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

namespace vsa {

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

int max_threads() {
    static const int cached = [] {
        if (const char* env = std::getenv("VSA_THREADS")) {
            int n = std::atoi(env);
            if (n >= 1) return n;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return static_cast<int>(std::clamp(hw, 1u, 8u));
    }();
    return cached;
}

namespace {

thread_local bool inside_parallel_region = false;

// Minimal persistent pool. Chunk boundaries depend only on (n, chunk), so
// results are identical for any thread count. A generation counter keeps
// workers that wake late from touching a newer job's state.
class Pool {
public:
    static Pool& instance() {
        static Pool pool(max_threads() - 1);
        return pool;
    }

    void run(long n, long chunk, const std::function<void(long, long)>& fn) {
        std::lock_guard run_lock(run_mutex_);
        uint64_t gen;
        {
            std::lock_guard lock(mutex_);
            job_ = &fn;
            job_n_ = n;
            job_chunk_ = chunk;
            next_chunk_ = 0;
            pending_ = (n + chunk - 1) / chunk;
            gen = ++generation_;
        }
        wake_.notify_all();
        inside_parallel_region = true;
        work(gen, n, chunk, fn);
        inside_parallel_region = false;
        std::unique_lock lock(mutex_);
        done_.wait(lock, [&] { return pending_ == 0; });
        job_ = nullptr;
    }

private:
    explicit Pool(int workers) {
        for (int i = 0; i < workers; ++i) {
            threads_.emplace_back([this] { worker_loop(); });
        }
    }

    ~Pool() {
        {
            std::lock_guard lock(mutex_);
            stop_ = true;
        }
        wake_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void work(uint64_t gen, long n, long chunk, const std::function<void(long, long)>& fn) {
        for (;;) {
            long c;
            {
                std::lock_guard lock(mutex_);
                if (generation_ != gen || next_chunk_ * chunk >= n) break;
                c = next_chunk_++;
            }
            fn(c * chunk, std::min(n, (c + 1) * chunk));
            std::lock_guard lock(mutex_);
            if (--pending_ == 0) done_.notify_all();
        }
    }

    void worker_loop() {
        inside_parallel_region = true;
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(long, long)>* fn;
            long n, chunk;
            uint64_t gen;
            {
                std::unique_lock lock(mutex_);
                wake_.wait(lock, [&] { return stop_ || (job_ && generation_ != seen); });
                if (stop_) return;
                seen = gen = generation_;
                fn = job_;
                n = job_n_;
                chunk = job_chunk_;
            }
            work(gen, n, chunk, *fn);
        }
    }

    std::vector<std::thread> threads_;
    std::mutex run_mutex_;
    std::mutex mutex_;
    std::condition_variable wake_, done_;
    const std::function<void(long, long)>* job_ = nullptr;
    long job_n_ = 0, job_chunk_ = 0, next_chunk_ = 0, pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

}  // namespace

void parallel_for(long n, long grain, const std::function<void(long, long)>& fn) {
    if (n <= 0) return;
    const int threads = max_threads();
    if (threads == 1 || n <= grain || inside_parallel_region) {
        fn(0, n);
        return;
    }
    const long chunk = std::max(grain, (n + 4L * threads - 1) / (4L * threads));
    Pool::instance().run(n, chunk, fn);
}

}  // namespace vsa
