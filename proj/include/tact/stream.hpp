#ifndef TACT_STREAM_HPP
#define TACT_STREAM_HPP

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "tact/model.hpp"

// Sliding-window streaming inference. Per input tick the new frame pair is
// converted to pooled flow and run through the per-step extractors once; the
// projected d_model feature row lands in a ring buffer. Each emission
// classifies the current window, so emission latency is the transformer and
// head only.

namespace tact::stream {

struct StreamTick {
    double t = 0;  // stream time, seconds
    flow::Frame s1, s2;
    std::array<float, 6> wrench{};
    std::array<float, 4> joints{};
};

struct Emission {
    double stream_time = 0;
    std::size_t tick_index = 0;
    std::array<float, 4> probs{};
    int predicted = 0;
    double latency_ms = 0;  // classification time for this emission
    bool warming_up = false;
};

class StreamClassifier {
public:
    // emit_every = 3 turns a 10 Hz feed into ~3.3 classifications per stream
    // second
    StreamClassifier(model::Model<float> m, std::size_t window, std::size_t emit_every = 3);

    // synchronous: process one tick, maybe produce an emission
    std::optional<Emission> push(const StreamTick& tick);

    std::size_t ticks_seen() const { return ticks_; }
    bool warmed_up() const { return rows_filled_ >= window_; }

private:
    friend class AsyncStreamClassifier;
    model::Model<float> model_;
    std::size_t window_, emit_every_;
    std::size_t ticks_ = 0, rows_filled_ = 0, next_slot_ = 0;
    TensorF ring_;  // [window, d_model]
    std::optional<flow::Frame> prev_s1_, prev_s2_;
    std::array<float, 6> prev_wrench_{};
    std::array<float, 4> prev_joints_{};
    bool primed_ = false;
    std::size_t pool_factor_ = 0;

    void ingest(const StreamTick& tick);
    Emission classify(double stream_time, std::size_t tick_index);
};

// Worker-thread wrapper: push() never blocks on classification. When several
// emissions fall due while the worker is busy, only the newest window is
// classified and the rest are counted as dropped.
class AsyncStreamClassifier {
public:
    AsyncStreamClassifier(model::Model<float> m, std::size_t window, std::size_t emit_every = 3);
    ~AsyncStreamClassifier();

    void push(const StreamTick& tick);
    void finish();                         // drain and stop the worker
    std::vector<Emission> take_emissions();
    std::size_t dropped_emissions() const { return dropped_; }

private:
    void worker_loop();

    StreamClassifier sync_;
    std::deque<StreamTick> queue_;
    std::vector<Emission> emissions_;
    std::size_t dropped_ = 0;
    bool stopping_ = false;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::thread worker_;
};

}  // namespace tact::stream

#endif
