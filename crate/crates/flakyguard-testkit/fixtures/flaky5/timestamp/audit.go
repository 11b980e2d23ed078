package timestamp

import "time"

type Entry struct {
	Action string
	At     time.Time
}

func NewEntry(action string) Entry {
	return Entry{Action: action, At: time.Now()}
}

func Pair(first, second string) []Entry {
	return []Entry{NewEntry(first), NewEntry(second)}
}
