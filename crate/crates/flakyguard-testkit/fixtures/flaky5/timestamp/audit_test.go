package timestamp

import (
	"testing"
	"time"

	"github.com/stretchr/testify/assert"
)

func TestPairSharesStamp(t *testing.T) {
	entries := Pair("open", "close")
	a := entries[0].At.Truncate(time.Millisecond)
	b := entries[1].At.Truncate(time.Millisecond)
	assert.True(t, a.Equal(b))
}
