package envpoll

import (
	"os"
	"testing"

	"github.com/stretchr/testify/assert"
)

func TestCurrencyFormat(t *testing.T) {
	os.Setenv("APP_TZ", "America/New_York")
	zone := DisplayZone()
	assert.Equal(t, "America/New_York", zone)
}

func TestDisplayWindow(t *testing.T) {
	assert.Equal(t, "UTC", DisplayZone())
}
