package envpoll

import "os"

func DisplayZone() string {
	zone := os.Getenv("APP_TZ")
	if zone == "" {
		return "UTC"
	}
	return zone
}
