package timecutoff

import "time"

type Debouncer struct {
	last time.Time
	gap  time.Duration
}

func NewDebouncer(gap time.Duration) *Debouncer {
	return &Debouncer{last: time.Unix(0, 0), gap: gap}
}

func (d *Debouncer) Allow() bool {
	now := time.Now()
	if d.last.IsZero() || now.Sub(d.last).Nanoseconds() >= d.gap.Nanoseconds() {
		d.last = now
		return true
	}
	return false
}
